//! Decentralized PID + low-pass controllers with optional notch filters.
//!
//! Channel `i` of `C = diag(C_1, ..., C_n)` is
//!
//! ```text
//! C_i(s) = K_p (s + w_I)/s (s/w_D + 1) / (s^2/w_lp^2 + 2 z_lp s/w_lp + 1) * prod N_j(s)
//! N_j(s) = (s^2 + 2 beta_j zeta_j w_n s + w_n^2) / (s^2 + 2 zeta_j w_n s + w_n^2)
//! ```
//!
//! with `K_p = m w_c^2/alpha`, `w_I = w_c/alpha^2`, `w_D = w_c/alpha` and
//! `w_lp = alpha w_c`, so each channel is tuned by its single bandwidth
//! parameter `w_c`. The decision vector is `[w_c; beta; zeta]`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{FrequencyResponse, StateSpace};
use crate::linalg::CMatrix;

pub const DEFAULT_ALPHA: f64 = 3.0;
pub const DEFAULT_Z_LP: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidLowpassSpec {
    pub modal_mass: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_z_lp")]
    pub z_lp: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_z_lp() -> f64 {
    DEFAULT_Z_LP
}

impl PidLowpassSpec {
    /// Channel with the default `alpha = 3`, `z_lp = 0.7`.
    pub fn with_mass(modal_mass: f64) -> Self {
        Self { modal_mass, alpha: DEFAULT_ALPHA, z_lp: DEFAULT_Z_LP }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.modal_mass > 0.0 && self.modal_mass.is_finite()) {
            return Err(Error::InvalidController(format!("modal_mass must be positive, got {}", self.modal_mass)));
        }
        if !(self.alpha > 1.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidController(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if !(self.z_lp > 0.0 && self.z_lp < 1.0) {
            return Err(Error::InvalidController(format!("z_lp must lie in (0, 1), got {}", self.z_lp)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NotchSpec {
    pub channel: usize,
    pub omega_n: f64,
}

/// Fixed controller structure: one PID+LP block per channel plus the notch list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerStructure {
    pub channels: Vec<PidLowpassSpec>,
    #[serde(default)]
    pub notches: Vec<NotchSpec>,
}

/// What a decision-vector entry parameterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Bandwidth { channel: usize },
    NotchDepth { notch: usize },
    NotchWidth { notch: usize },
}

impl ControllerStructure {
    pub fn new(channels: Vec<PidLowpassSpec>, notches: Vec<NotchSpec>) -> Result<Self> {
        let s = Self { channels, notches };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::InvalidController("controller needs at least one channel".into()));
        }
        for (i, c) in self.channels.iter().enumerate() {
            c.validate().map_err(|e| Error::InvalidController(format!("channel {i}: {e}")))?;
        }
        for (j, n) in self.notches.iter().enumerate() {
            if n.channel >= self.channels.len() {
                return Err(Error::InvalidController(format!(
                    "notch {j} is on channel {} but only {} channels exist",
                    n.channel,
                    self.channels.len()
                )));
            }
            if !(n.omega_n > 0.0 && n.omega_n.is_finite()) {
                return Err(Error::InvalidController(format!("notch {j}: omega_n must be positive")));
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_notches(&self) -> usize {
        self.notches.len()
    }

    /// Decision count `n + 2p`.
    pub fn n_params(&self) -> usize {
        self.n_channels() + 2 * self.n_notches()
    }

    pub fn param_role(&self, index: usize) -> Option<ParamRole> {
        let (n, p) = (self.n_channels(), self.n_notches());
        if index < n {
            Some(ParamRole::Bandwidth { channel: index })
        } else if index < n + p {
            Some(ParamRole::NotchDepth { notch: index - n })
        } else if index < n + 2 * p {
            Some(ParamRole::NotchWidth { notch: index - n - p })
        } else {
            None
        }
    }

    /// Channel hosting decision entry `index`.
    pub fn param_channel(&self, index: usize) -> Option<usize> {
        self.param_role(index).map(|r| match r {
            ParamRole::Bandwidth { channel } => channel,
            ParamRole::NotchDepth { notch } | ParamRole::NotchWidth { notch } => self.notches[notch].channel,
        })
    }

    fn channel_notches(&self, channel: usize) -> impl Iterator<Item = usize> + '_ {
        self.notches.iter().enumerate().filter(move |(_, n)| n.channel == channel).map(|(j, _)| j)
    }
}

/// Controller parameter values `theta_c = [w_c; beta; zeta]` plus the scaling
/// from internal normalized variables to physical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub omega_c: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub zeta: Vec<f64>,
    pub scaling: Vec<f64>,
}

impl ControllerParams {
    /// Builds parameters and checks the strict invariants:
    /// `w_c > 0`, `beta` in `(0, 1]`, `zeta > 0`, positive scaling of length `n + 2p`.
    pub fn new(structure: &ControllerStructure, omega_c: Vec<f64>, beta: Vec<f64>, zeta: Vec<f64>, scaling: Vec<f64>) -> Result<Self> {
        let p = Self { omega_c, beta, zeta, scaling };
        p.check_shape(structure)?;
        p.check_well_defined()?;
        if let Some(b) = p.beta.iter().find(|&&b| b > 1.0) {
            return Err(Error::InvalidController(format!("notch depth beta must lie in (0, 1], got {b}")));
        }
        Ok(p)
    }

    /// Parameters with unit scaling.
    pub fn unscaled(structure: &ControllerStructure, omega_c: Vec<f64>, beta: Vec<f64>, zeta: Vec<f64>) -> Result<Self> {
        let m = structure.n_params();
        Self::new(structure, omega_c, beta, zeta, vec![1.0; m])
    }

    /// Rebuilds parameters from a physical decision vector. Only requires the
    /// controller to be well defined (`beta > 1` is allowed so that the
    /// solver can evaluate points outside the box constraints).
    pub fn from_vector(structure: &ControllerStructure, theta: &[f64], scaling: &[f64]) -> Result<Self> {
        let (n, p) = (structure.n_channels(), structure.n_notches());
        if theta.len() != n + 2 * p {
            return Err(Error::DimensionMismatch(format!("decision vector has {} entries, expected {}", theta.len(), n + 2 * p)));
        }
        let out = Self {
            omega_c: theta[..n].to_vec(),
            beta: theta[n..n + p].to_vec(),
            zeta: theta[n + p..].to_vec(),
            scaling: scaling.to_vec(),
        };
        out.check_shape(structure)?;
        out.check_well_defined()?;
        Ok(out)
    }

    fn check_shape(&self, structure: &ControllerStructure) -> Result<()> {
        let (n, p) = (structure.n_channels(), structure.n_notches());
        if self.omega_c.len() != n || self.beta.len() != p || self.zeta.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} bandwidths and {p} notch depths/widths, got {}/{}/{}",
                self.omega_c.len(),
                self.beta.len(),
                self.zeta.len()
            )));
        }
        if self.scaling.len() != n + 2 * p {
            return Err(Error::DimensionMismatch(format!(
                "scaling has {} entries, expected {}",
                self.scaling.len(),
                n + 2 * p
            )));
        }
        if self.scaling.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidController("scaling entries must be positive".into()));
        }
        Ok(())
    }

    fn check_well_defined(&self) -> Result<()> {
        if let Some(w) = self.omega_c.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidController(format!("omega_c must be positive, got {w}")));
        }
        if let Some(b) = self.beta.iter().find(|&&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidController(format!("notch depth beta must be positive, got {b}")));
        }
        if let Some(z) = self.zeta.iter().find(|&&z| !(z > 0.0 && z.is_finite())) {
            return Err(Error::InvalidController(format!("notch width zeta must be positive, got {z}")));
        }
        Ok(())
    }

    /// Physical decision vector `[w_c; beta; zeta]`.
    pub fn to_vector(&self) -> Vec<f64> {
        self.omega_c.iter().chain(&self.beta).chain(&self.zeta).copied().collect()
    }

    /// Physical values to internal normalized variables (`raw / scaling`).
    pub fn scale_params(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.scaling).map(|(x, s)| x / s).collect()
    }

    /// Internal normalized variables to physical values (`internal * scaling`).
    pub fn unscale_params(&self, internal: &[f64]) -> Vec<f64> {
        internal.iter().zip(&self.scaling).map(|(x, s)| x * s).collect()
    }
}

/// A controller that can close the loop around a plant.
pub trait LoopController: Sync {
    fn n_channels(&self) -> usize;

    /// `C(j omega)`.
    fn response(&self, omega: f64) -> Result<FrequencyResponse>;

    /// `dC(j omega)/d omega`.
    fn frequency_derivative(&self, omega: f64) -> Result<CMatrix>;

    /// Real state-space realization, used for closed-loop stability checks.
    fn realization(&self) -> StateSpace;
}

/// `C = 0`, the open loop.
#[derive(Debug, Clone, Copy)]
pub struct ZeroController {
    pub n: usize,
}

impl LoopController for ZeroController {
    fn n_channels(&self) -> usize {
        self.n
    }

    fn response(&self, omega: f64) -> Result<FrequencyResponse> {
        Ok(FrequencyResponse { omega, value: CMatrix::zeros(self.n, self.n) })
    }

    fn frequency_derivative(&self, _omega: f64) -> Result<CMatrix> {
        Ok(CMatrix::zeros(self.n, self.n))
    }

    fn realization(&self) -> StateSpace {
        StateSpace {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, self.n),
            c: DMatrix::zeros(self.n, 0),
            d: DMatrix::zeros(self.n, self.n),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Factor {
    value: Complex64,
    d_s: Complex64,
}

/// `sum_k d_k prod_{j != k} f_j` without dividing by any factor.
fn product_rule(values: &[Complex64], derivs: &[(usize, Complex64)]) -> Complex64 {
    derivs
        .iter()
        .map(|&(k, dk)| {
            values
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .fold(dk, |acc, (_, f)| acc * f)
        })
        .sum()
}

/// `C(s; theta)` for a fixed structure and parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct DecentralizedController {
    pub structure: ControllerStructure,
    pub params: ControllerParams,
}

/// Number of leading PID+LP factors before the notch factors.
const PID_FACTORS: usize = 4;

impl DecentralizedController {
    pub fn new(structure: ControllerStructure, params: ControllerParams) -> Result<Self> {
        structure.validate()?;
        params.check_shape(&structure)?;
        params.check_well_defined()?;
        Ok(Self { structure, params })
    }

    pub fn n_params(&self) -> usize {
        self.structure.n_params()
    }

    fn check_s(s: Complex64) -> Result<()> {
        if s.norm() == 0.0 {
            return Err(Error::IntegratorPole { omega: s.im });
        }
        Ok(())
    }

    /// Factors of channel `i`: `[K_p, (s+w_I)/s, s/w_D + 1, LP, notches...]`.
    fn channel_factors(&self, i: usize, s: Complex64) -> Vec<Factor> {
        let spec = &self.structure.channels[i];
        let wc = self.params.omega_c[i];
        let a = spec.alpha;
        let kp = spec.modal_mass * wc * wc / a;
        let wi = wc / (a * a);
        let wd = wc / a;
        let wlp = a * wc;
        let z = spec.z_lp;
        let lp_den = s * s / (wlp * wlp) + s * (2.0 * z / wlp) + 1.0;
        let mut f = vec![
            Factor { value: Complex64::new(kp, 0.0), d_s: Complex64::new(0.0, 0.0) },
            Factor { value: (s + wi) / s, d_s: -wi / (s * s) },
            Factor { value: s / wd + 1.0, d_s: Complex64::new(1.0 / wd, 0.0) },
            Factor {
                value: lp_den.inv(),
                d_s: -(s * (2.0 / (wlp * wlp)) + 2.0 * z / wlp) / (lp_den * lp_den),
            },
        ];
        for j in self.structure.channel_notches(i) {
            let (num, den) = self.notch_polys(j, s);
            let wn = self.structure.notches[j].omega_n;
            let (b, zeta) = (self.params.beta[j], self.params.zeta[j]);
            let dnum = s * 2.0 + 2.0 * b * zeta * wn;
            let dden = s * 2.0 + 2.0 * zeta * wn;
            f.push(Factor { value: num / den, d_s: (dnum * den - num * dden) / (den * den) });
        }
        f
    }

    fn notch_polys(&self, j: usize, s: Complex64) -> (Complex64, Complex64) {
        let wn = self.structure.notches[j].omega_n;
        let (b, z) = (self.params.beta[j], self.params.zeta[j]);
        let num = s * s + s * (2.0 * b * z * wn) + wn * wn;
        let den = s * s + s * (2.0 * z * wn) + wn * wn;
        (num, den)
    }

    /// Channel transfer function `C_i(s)`.
    pub fn channel_at(&self, i: usize, s: Complex64) -> Result<Complex64> {
        Self::check_s(s)?;
        Ok(self.channel_factors(i, s).iter().map(|f| f.value).product())
    }

    /// Notch filter `N_j(s)` alone.
    pub fn notch_at(&self, j: usize, s: Complex64) -> Complex64 {
        let (num, den) = self.notch_polys(j, s);
        num / den
    }

    /// `C(s)` at an arbitrary nonzero Laplace point.
    pub fn transfer_at(&self, s: Complex64) -> Result<CMatrix> {
        Self::check_s(s)?;
        let n = self.structure.n_channels();
        let mut c = CMatrix::zeros(n, n);
        for i in 0..n {
            c[(i, i)] = self.channel_at(i, s)?;
        }
        Ok(c)
    }

    /// `dC(j omega)/d theta_index`, diagonal with a single nonzero entry.
    pub fn param_derivative(&self, omega: f64, index: usize) -> Result<FrequencyResponse> {
        let s = Complex64::new(0.0, omega);
        Self::check_s(s)?;
        let role = self
            .structure
            .param_role(index)
            .ok_or_else(|| Error::DimensionMismatch(format!("parameter index {index} out of range")))?;
        let n = self.structure.n_channels();
        let mut out = CMatrix::zeros(n, n);
        let channel = self.structure.param_channel(index).expect("role exists");
        let factors = self.channel_factors(channel, s);
        let values: Vec<Complex64> = factors.iter().map(|f| f.value).collect();
        let d = match role {
            ParamRole::Bandwidth { channel: i } => {
                let spec = &self.structure.channels[i];
                let wc = self.params.omega_c[i];
                let a = spec.alpha;
                let z = spec.z_lp;
                let lp_den = s * s / (a * a * wc * wc) + s * (2.0 * z / (a * wc)) + 1.0;
                let dlp_den = -s * s * (2.0 / (a * a * wc * wc * wc)) - s * (2.0 * z / (a * wc * wc));
                let derivs = [
                    (0, Complex64::new(2.0 * spec.modal_mass * wc / a, 0.0)),
                    (1, Complex64::new(1.0 / (a * a), 0.0) / s),
                    (2, -s * (a / (wc * wc))),
                    (3, -dlp_den / (lp_den * lp_den)),
                ];
                product_rule(&values, &derivs)
            }
            ParamRole::NotchDepth { notch } | ParamRole::NotchWidth { notch } => {
                let pos = PID_FACTORS + self.structure.channel_notches(channel).position(|j| j == notch).expect("owned notch");
                let wn = self.structure.notches[notch].omega_n;
                let (b, z) = (self.params.beta[notch], self.params.zeta[notch]);
                let (num, den) = self.notch_polys(notch, s);
                let dn = match role {
                    ParamRole::NotchDepth { .. } => s * (2.0 * z * wn) / den,
                    _ => s * (2.0 * wn) * (den * b - num) / (den * den),
                };
                product_rule(&values, &[(pos, dn)])
            }
        };
        out[(channel, channel)] = d;
        Ok(FrequencyResponse { omega, value: out })
    }

    /// Second-order-section realization of channel `i`, with the
    /// oscillator states scaled by their natural frequency.
    fn channel_realization(&self, i: usize) -> StateSpace {
        let spec = &self.structure.channels[i];
        let wc = self.params.omega_c[i];
        let a = spec.alpha;
        let kp = spec.modal_mass * wc * wc / a;
        let wi = wc / (a * a);
        let wd = wc / a;
        let wlp = a * wc;
        let one = |x: f64| DMatrix::from_element(1, 1, x);
        // K_p (1 + w_I/s)
        let pi = StateSpace { a: one(0.0), b: one(1.0), c: one(kp * wi), d: one(kp) };
        // w_lp^2 (s/w_D + 1) / (s^2 + 2 z w_lp s + w_lp^2)
        let lead_lp = second_order(wlp, spec.z_lp, wlp * wlp, wlp * wlp / wd, 0.0);
        let mut sys = pi.series(&lead_lp);
        for j in self.structure.channel_notches(i) {
            let wn = self.structure.notches[j].omega_n;
            let (b, z) = (self.params.beta[j], self.params.zeta[j]);
            // N = 1 + 2 (beta - 1) zeta w_n s / (s^2 + 2 zeta w_n s + w_n^2)
            sys = sys.series(&second_order(wn, z, 0.0, 2.0 * (b - 1.0) * z * wn, 1.0));
        }
        sys
    }
}

/// `(b1 s + b0) / (s^2 + 2 z w s + w^2) + d` with states `(w x1, x1')`.
fn second_order(w: f64, z: f64, b0: f64, b1: f64, d: f64) -> StateSpace {
    StateSpace {
        a: DMatrix::from_row_slice(2, 2, &[0.0, w, -w, -2.0 * z * w]),
        b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        c: DMatrix::from_row_slice(1, 2, &[b0 / w, b1]),
        d: DMatrix::from_element(1, 1, d),
    }
}

impl LoopController for DecentralizedController {
    fn n_channels(&self) -> usize {
        self.structure.n_channels()
    }

    fn response(&self, omega: f64) -> Result<FrequencyResponse> {
        Ok(FrequencyResponse { omega, value: self.transfer_at(Complex64::new(0.0, omega))? })
    }

    fn frequency_derivative(&self, omega: f64) -> Result<CMatrix> {
        let s = Complex64::new(0.0, omega);
        Self::check_s(s)?;
        let n = self.structure.n_channels();
        let mut out = CMatrix::zeros(n, n);
        for i in 0..n {
            let f = self.channel_factors(i, s);
            let values: Vec<Complex64> = f.iter().map(|x| x.value).collect();
            let derivs: Vec<(usize, Complex64)> = f.iter().enumerate().map(|(k, x)| (k, x.d_s)).collect();
            // d/d omega = j d/ds on the imaginary axis
            out[(i, i)] = product_rule(&values, &derivs) * Complex64::new(0.0, 1.0);
        }
        Ok(out)
    }

    fn realization(&self) -> StateSpace {
        let mut sys = self.channel_realization(0);
        for i in 1..self.structure.n_channels() {
            sys = sys.append(&self.channel_realization(i));
        }
        sys
    }
}

/// `C(j omega; theta)`.
pub fn eval_controller(controller: &DecentralizedController, omega: f64) -> Result<FrequencyResponse> {
    controller.response(omega)
}

/// `dC(j omega)/d theta_index`.
pub fn controller_param_derivative(controller: &DecentralizedController, omega: f64, index: usize) -> Result<FrequencyResponse> {
    controller.param_derivative(omega, index)
}
