//! Random coupled fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use bwsynth::controller::{ControllerParams, ControllerStructure, DecentralizedController, NotchSpec, PidLowpassSpec};
use bwsynth::freq::{check_stability, compute_bandwidth, sensitivity_matrix, sensitivity_peaks_of, FrequencyGrid};
use bwsynth::lti::{DecoupledPlant, ModalPlant};
use bwsynth::subgrad::{constraint_subgradients, objective_subgradients};
use nalgebra::DMatrix;
use rand::Rng;

pub struct Fixture {
    pub plant: DecoupledPlant,
    pub structure: ControllerStructure,
    pub theta: Vec<f64>,
}

impl Fixture {
    pub fn controller(&self, theta: &[f64]) -> DecentralizedController {
        let params = ControllerParams::from_vector(&self.structure, theta, &vec![1.0; theta.len()]).unwrap();
        DecentralizedController::new(self.structure.clone(), params).unwrap()
    }

    pub fn bandwidth(&self, theta: &[f64], grid: &FrequencyGrid) -> f64 {
        compute_bandwidth(&self.plant, &self.controller(theta), grid, 0.02).unwrap().omega_bw
    }

    pub fn hinf(&self, theta: &[f64], grid: &FrequencyGrid) -> f64 {
        let c = self.controller(theta);
        sensitivity_peaks_of(|w| sensitivity_matrix(&self.plant, &c, w), grid, 0.005).unwrap().hinf
    }
}

/// `n` coupled rigid bodies, each with a collocated resonance, under PID+LP
/// control and optionally one notch on channel 0.
pub fn random_fixture<R: Rng>(rng: &mut R, n: usize) -> Fixture {
    let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
    let res: Vec<f64> = (0..n).map(|_| rng.gen_range(2500.0..6000.0)).collect();
    let modes = 2 * n;
    let mut mass = masses.clone();
    let mut damping = vec![0.0; n];
    let mut stiffness = vec![0.0; n];
    let mut p = DMatrix::zeros(modes, n);
    let mut q = DMatrix::zeros(n, modes);
    for i in 0..n {
        for j in 0..n {
            let e = if i == j { 1.0 } else { rng.gen_range(-0.05..0.05) };
            p[(i, j)] = e;
            q[(j, i)] = if i == j { 1.0 } else { rng.gen_range(-0.05..0.05) };
        }
        let w = res[i];
        mass.push(1.0);
        damping.push(2.0 * 0.02 * w);
        stiffness.push(w * w);
        let amp = (0.1 / masses[i]).sqrt();
        p[(n + i, i)] = amp;
        q[(i, n + i)] = amp;
    }
    let base = ModalPlant::new(mass, damping, stiffness, p, q).unwrap();
    let plant = DecoupledPlant::undecoupled(base).unwrap();
    let channels = masses.iter().map(|&m| PidLowpassSpec::with_mass(m)).collect();
    let notches = if rng.gen_bool(0.5) { vec![NotchSpec { channel: 0, omega_n: res[0] }] } else { vec![] };
    let mut theta: Vec<f64> = (0..n).map(|_| rng.gen_range(100.0..400.0)).collect();
    for _ in 0..notches.len() {
        theta.push(rng.gen_range(0.3..0.9));
    }
    for _ in 0..notches.len() {
        theta.push(rng.gen_range(0.1..0.5));
    }
    Fixture { plant, structure: ControllerStructure::new(channels, notches).unwrap(), theta }
}

/// Largest relative mismatch of the analytic subgradients against central
/// differences (step `1e-5` relative), or `None` when the point is not smooth
/// (clustered singular values, several peaks, peak on the grid edge, unstable).
pub fn gradient_mismatch(f: &Fixture, grid: &FrequencyGrid) -> Option<(f64, f64)> {
    let c = f.controller(&f.theta);
    if !check_stability(&f.plant, &c).ok()?.stable {
        return None;
    }
    let bw = compute_bandwidth(&f.plant, &c, grid, 0.02).ok()?;
    let peaks = sensitivity_peaks_of(|w| sensitivity_matrix(&f.plant, &c, w), grid, 0.005).ok()?;
    if bw.cluster.len() != 1 || peaks.peaks.len() != 1 || peaks.peaks[0].cluster.len() != 1 {
        return None;
    }
    let edge = peaks.peaks[0].omega;
    if edge <= grid.min() * 1.01 || edge >= grid.max() / 1.01 {
        return None;
    }
    let g_bw = objective_subgradients(&f.plant, &c, &bw).ok()?.first().to_vec();
    let g_h = constraint_subgradients(&f.plant, &c, &peaks).ok()?.first().to_vec();
    let fd = |func: &dyn Fn(&[f64]) -> f64| -> Vec<f64> {
        (0..f.theta.len())
            .map(|k| {
                let h = 1e-5 * f.theta[k];
                let mut plus = f.theta.clone();
                let mut minus = f.theta.clone();
                plus[k] += h;
                minus[k] -= h;
                (func(&plus) - func(&minus)) / (2.0 * h)
            })
            .collect()
    };
    let fd_bw = fd(&|t| f.bandwidth(t, grid));
    let fd_h = fd(&|t| f.hinf(t, grid));
    Some((relative(&g_bw, &fd_bw), relative(&g_h, &fd_h)))
}

/// `||a - b||_inf / ||a||_inf`.
pub fn relative(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}
