use thiserror::Error;

/// Errors raised by plant construction, frequency analysis and synthesis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid plant: {0}")]
    InvalidPlant(String),

    #[error("invalid controller: {0}")]
    InvalidController(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("plant resolvent is singular at omega = {omega} rad/s (undamped resonance of mode {mode})")]
    SingularResolvent { omega: f64, mode: usize },

    #[error("controller has a pole at s = 0; cannot evaluate at omega = {omega}")]
    IntegratorPole { omega: f64 },

    #[error("I + L is numerically singular at omega = {omega} rad/s (closed-loop pole on the imaginary axis)")]
    ClosedLoopSingular { omega: f64 },

    #[error("loop gain never crosses unity on the frequency grid [{omega_min}, {omega_max}] rad/s")]
    NoCrossover { omega_min: f64, omega_max: f64 },

    #[error("tangential unity crossing at omega = {omega} rad/s: d(sigma)/d(omega) = {slope:e}")]
    TangentialCrossing { omega: f64, slope: f64 },

    #[error("closed loop is unstable (spectral abscissa {abscissa:e})")]
    Unstable { abscissa: f64 },

    #[error("parse error in {file} at line {line}, column {column}, field `{path}`: {message}")]
    Parse {
        file: String,
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
