//! Synthetic plants: a two-axis crossover fixture, a flexible
//! seven-channel stage, and a dummy two-peak sensitivity function.

use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerParams, ControllerStructure, NotchSpec, PidLowpassSpec};
use crate::error::{Error, Result};
use crate::freq::{sensitivity_peaks_of, FrequencyGrid, SensitivityPeaks};
use crate::linalg::CMatrix;
use crate::lti::{DecoupledPlant, ModalPlant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PlantRecipe {
    TwoAxis(TwoAxisParams),
    FlexstageLike(FlexstageParams),
    FromFile { path: PathBuf },
}

pub fn make_plant(recipe: &PlantRecipe) -> Result<DecoupledPlant> {
    match recipe {
        PlantRecipe::TwoAxis(p) => two_axis(p),
        PlantRecipe::FlexstageLike(p) => flexstage_like(p),
        PlantRecipe::FromFile { path } => crate::io::load_plant(path),
    }
}

/// Two decoupled axes `1/(m s^2 + d s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoAxisParams {
    pub mass_x: f64,
    pub mass_y: f64,
    pub damping: f64,
}

impl Default for TwoAxisParams {
    fn default() -> Self {
        Self { mass_x: 1.0, mass_y: 1.0, damping: 0.0 }
    }
}

pub fn two_axis(p: &TwoAxisParams) -> Result<DecoupledPlant> {
    let base = ModalPlant::new(vec![p.mass_x, p.mass_y], vec![p.damping; 2], vec![0.0; 2], DMatrix::identity(2, 2), DMatrix::identity(2, 2))?;
    DecoupledPlant::undecoupled(base)
}

/// Controller structure of the two-axis fixture: one PID+LP per axis, no notches.
pub fn two_axis_structure(p: &TwoAxisParams) -> ControllerStructure {
    ControllerStructure { channels: vec![PidLowpassSpec::with_mass(p.mass_x), PidLowpassSpec::with_mass(p.mass_y)], notches: vec![] }
}

/// A structural mode seen mainly by one channel, leaking into others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParasiticMode {
    pub channel: usize,
    pub freq_hz: f64,
    /// Resonance peak of the channel relative to its rigid-body response is about `gain / (2 zeta)`.
    pub gain: f64,
    /// `(channel, weight)` pairs; the mode enters channel `c` with `coupling * weight`
    /// times the amplitude it has in its own channel, normalized by `c`'s mass.
    #[serde(default)]
    pub leaks: Vec<(usize, f64)>,
    /// Sensor and actuator on the same side of the mode. A non-collocated mode
    /// with `gain > 1` flips the high-frequency sign of the channel and so
    /// bounds the achievable bandwidth.
    #[serde(default = "yes")]
    pub collocated: bool,
}

fn yes() -> bool {
    true
}

/// Knobs of the seven-channel stage: `x, y, z, rx, ry, rz` rigid-body
/// channels and a compliant channel `q` carrying a low-frequency flexible
/// mode, driven by eight actuators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlexstageParams {
    /// Translational mass (kg).
    pub mass: f64,
    /// Rotational inertia (kg m^2).
    pub inertia: f64,
    /// Mass of the flexible channel's coordinate.
    pub flex_mass: f64,
    /// Resonance of the flexible channel relative to its rigid-body response.
    pub flex_gain: f64,
    pub flex_hz: f64,
    pub flex_zeta: f64,
    /// Damping ratio of every parasitic mode.
    pub parasitic_zeta: f64,
    /// Scales every cross-channel leak; 0 gives a diagonal plant.
    pub coupling: f64,
    pub modes: Vec<ParasiticMode>,
}

pub const FLEXSTAGE_CHANNELS: [&str; 7] = ["x", "y", "z", "rx", "ry", "rz", "q"];
pub const FLEXSTAGE_INPUTS: usize = 8;

impl Default for FlexstageParams {
    fn default() -> Self {
        let mode = |channel, freq_hz, gain, leaks: &[(usize, f64)]| ParasiticMode { channel, freq_hz, gain, leaks: leaks.to_vec(), collocated: true };
        let far = |channel| ParasiticMode { channel, freq_hz: 2000.0, gain: 2.0, leaks: vec![], collocated: false };
        let mut modes = vec![
            mode(0, 606.0, 0.2, &[(1, 0.5), (5, 0.3)]),
            mode(1, 618.0, 0.2, &[(0, 0.5), (5, 0.3)]),
            mode(5, 652.0, 0.2, &[(0, 0.3), (1, 0.3)]),
            mode(2, 744.0, 0.2, &[(3, 0.3), (4, 0.3)]),
        ];
        modes.extend((0..7).map(far));
        Self {
            mass: 2.0,
            inertia: 0.02,
            flex_mass: 1.0,
            flex_gain: 0.05,
            flex_hz: 50.0,
            flex_zeta: 0.05,
            parasitic_zeta: 0.01,
            coupling: 0.3,
            modes,
        }
    }
}

impl FlexstageParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.mass, self.inertia, self.flex_mass, self.flex_gain, self.flex_hz, self.flex_zeta, self.parasitic_zeta];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidPlant("masses, frequencies and damping ratios must be positive".into()));
        }
        if !(self.coupling >= 0.0 && self.coupling.is_finite()) {
            return Err(Error::InvalidPlant("coupling must be nonnegative".into()));
        }
        for (k, m) in self.modes.iter().enumerate() {
            if m.channel >= 7 || m.leaks.iter().any(|(c, _)| *c >= 7 || *c == m.channel) {
                return Err(Error::InvalidPlant(format!("parasitic mode {k} references an invalid channel")));
            }
            if !(m.freq_hz > 0.0 && m.gain >= 0.0 && m.gain.is_finite()) {
                return Err(Error::InvalidPlant(format!("parasitic mode {k} needs a positive frequency and nonnegative gain")));
            }
        }
        Ok(())
    }

    /// Modal mass of each channel's rigid-body (or flexible) coordinate.
    pub fn channel_masses(&self) -> [f64; 7] {
        let (m, j) = (self.mass, self.inertia);
        [m, m, m, j, j, j, self.flex_mass]
    }
}

pub fn flexstage_like(p: &FlexstageParams) -> Result<DecoupledPlant> {
    p.validate()?;
    let masses = p.channel_masses();
    let n_modes = 8 + p.modes.len();
    let mut mass = masses.to_vec();
    let mut damping = vec![0.0; 7];
    let mut stiffness = vec![0.0; 7];
    let mut input = DMatrix::zeros(n_modes, FLEXSTAGE_INPUTS);
    let mut output = DMatrix::zeros(7, n_modes);
    for i in 0..7 {
        input[(i, i)] = 1.0;
        output[(i, i)] = 1.0;
    }
    let mut add_mode = |freq_hz: f64, zeta: f64| {
        let w = 2.0 * PI * freq_hz;
        mass.push(1.0);
        damping.push(2.0 * zeta * w);
        stiffness.push(w * w);
        mass.len() - 1
    };
    let row = add_mode(p.flex_hz, p.flex_zeta);
    let amp = (p.flex_gain / p.flex_mass).sqrt();
    input[(row, 6)] = amp;
    output[(6, row)] = amp;
    for m in &p.modes {
        let row = add_mode(m.freq_hz, p.parasitic_zeta);
        let amp = |c: usize| (m.gain / masses[c]).sqrt();
        let sign = if m.collocated { 1.0 } else { -1.0 };
        input[(row, m.channel)] = amp(m.channel);
        output[(m.channel, row)] = sign * amp(m.channel);
        for &(c, weight) in &m.leaks {
            input[(row, c)] += amp(c) * p.coupling * weight;
            output[(c, row)] += sign * amp(c) * p.coupling * weight;
        }
    }
    let base = ModalPlant::new(mass, damping, stiffness, input, output)?;
    DecoupledPlant::new(base, DMatrix::identity(FLEXSTAGE_INPUTS, FLEXSTAGE_INPUTS), DMatrix::identity(7, 7), 7)
}

/// PID+LP on every channel, optionally with notches at each channel's own
/// collocated resonances.
pub fn flexstage_structure(p: &FlexstageParams, notched_channels: &[usize]) -> ControllerStructure {
    let channels = p.channel_masses().iter().map(|&m| PidLowpassSpec::with_mass(m)).collect();
    let notches = p
        .modes
        .iter()
        .filter(|m| m.collocated && notched_channels.contains(&m.channel))
        .map(|m| NotchSpec { channel: m.channel, omega_n: 2.0 * PI * m.freq_hz })
        .collect();
    ControllerStructure { channels, notches }
}

/// Starting point with `omega_c = 377` rad/s on the rigid-body channels and 439 rad/s on the flexible one.
pub fn flexstage_initial(structure: &ControllerStructure, beta0: f64, zeta0: f64) -> Result<ControllerParams> {
    let omega_c: Vec<f64> = (0..structure.n_channels()).map(|i| if i == 6 { 439.0 } else { 377.0 }).collect();
    let p = structure.n_notches();
    let scaling = omega_c.iter().copied().chain(std::iter::repeat_n(1.0, 2 * p)).collect();
    ControllerParams::new(structure, omega_c, vec![beta0; p], vec![zeta0; p], scaling)
}

/// `S(s) = s/(s + w_hp) * P_1(s) * P_2(s)` with peak filters
/// `P_k = (s^2 + 2 z_k w_k s + w_k^2) / (s^2 + 2 beta_k z_k w_k s + w_k^2)`,
/// so `|S|` peaks at about `1/beta_k` near `w_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPeakSensitivity {
    pub omega_hp: f64,
    pub omega: [f64; 2],
    pub zeta: [f64; 2],
    pub beta: [f64; 2],
}

impl Default for TwoPeakSensitivity {
    fn default() -> Self {
        Self { omega_hp: 1.0, omega: [10.0, 1000.0], zeta: [0.3, 0.3], beta: [0.5, 0.5] }
    }
}

impl TwoPeakSensitivity {
    pub fn response(&self, omega: f64) -> CMatrix {
        let s = Complex64::new(0.0, omega);
        let mut v = s / (s + self.omega_hp);
        for k in 0..2 {
            let (w, z, b) = (self.omega[k], self.zeta[k], self.beta[k]);
            v *= (s * s + s * (2.0 * z * w) + w * w) / (s * s + s * (2.0 * b * z * w) + w * w);
        }
        CMatrix::from_element(1, 1, v)
    }

    pub fn peaks(&self, grid: &FrequencyGrid, delta_h: f64) -> Result<SensitivityPeaks> {
        sensitivity_peaks_of(|w| Ok(self.response(w)), grid, delta_h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::eval_plant;

    #[test]
    fn two_axis_symmetric() {
        let g = two_axis(&TwoAxisParams::default()).unwrap();
        let r = eval_plant(&g, 3.0).unwrap().value;
        assert_eq!(r[(0, 1)], Complex64::new(0.0, 0.0));
        assert_eq!(r[(0, 0)], r[(1, 1)]);
    }

    #[test]
    fn zero_coupling_is_diagonal() {
        let p = FlexstageParams { coupling: 0.0, ..Default::default() };
        let g = flexstage_like(&p).unwrap();
        for w in FrequencyGrid::log_spaced(1.0, 1e5, 200).unwrap().omegas() {
            let r = eval_plant(&g, *w).unwrap().value;
            for i in 0..7 {
                for j in 0..7 {
                    if i != j {
                        assert_eq!(r[(i, j)], Complex64::new(0.0, 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn flexible_channel_resonates_at_50_hz() {
        // the undamped rigid-body part of w^2 G is real
        let g = flexstage_like(&FlexstageParams::default()).unwrap();
        let grid = FrequencyGrid::log_spaced(2.0 * PI * 20.0, 2.0 * PI * 100.0, 4001).unwrap();
        let peak = grid
            .omegas()
            .iter()
            .map(|&w| (w, (w * w * eval_plant(&g, w).unwrap().value[(6, 6)]).im.abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!((peak.0 / (2.0 * PI) - 50.0).abs() < 0.5, "{}", peak.0 / (2.0 * PI));
    }

    #[test]
    fn coupling_resonances_present() {
        let g = flexstage_like(&FlexstageParams::default()).unwrap();
        let off = |w: f64, i, j| eval_plant(&g, 2.0 * PI * w).unwrap().value[(i, j)].norm();
        assert!(off(606.0, 1, 0) > 10.0 * off(400.0, 1, 0));
        assert!(off(744.0, 3, 2) > 10.0 * off(500.0, 3, 2));
        assert_eq!(off(100.0, 6, 0), 0.0);
    }

    #[test]
    fn two_peak_fixture() {
        let f = TwoPeakSensitivity::default();
        let peaks = f.peaks(&FrequencyGrid::default(), 0.005).unwrap();
        assert_eq!(peaks.peaks.len(), 2);
        let g = TwoPeakSensitivity { beta: [0.5, 0.6], ..f };
        assert_eq!(g.peaks(&FrequencyGrid::default(), 0.005).unwrap().peaks.len(), 1);
    }
}
