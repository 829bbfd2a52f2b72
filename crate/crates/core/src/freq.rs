//! MIMO bandwidth, sensitivity H-infinity peaks and closed-loop stability.
//!
//! The bandwidth is the first frequency where the minimum singular value of
//! `L(j omega)` falls through 1. The H-infinity norm of `S` is found by a grid
//! scan followed by golden-section refinement of every local maximum, which
//! also yields the peak-frequency set and singular vectors needed for
//! subgradients.

use nalgebra::{DMatrix, Schur};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::LoopController;
use crate::error::{Error, Result};
use crate::linalg::{identity, sigma_max, sigma_min, singular_values, svd_triplets, CMatrix, SingularTriplet};
use crate::lti::{eval_sensitivity, DecoupledPlant, FrequencyResponse};

pub const DEFAULT_DELTA_BW: f64 = 0.02;
pub const DEFAULT_DELTA_H: f64 = 0.005;

const GOLDEN_MAX_ITER: usize = 60;
const GOLDEN_LOG_TOL: f64 = 1e-10;

/// Log-spaced frequency grid description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { omega_min: 0.1, omega_max: 1e5, points: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
}

impl FrequencyGrid {
    pub fn log_spaced(omega_min: f64, omega_max: f64, points: usize) -> Result<Self> {
        if !(omega_min > 0.0 && omega_max > omega_min && omega_max.is_finite()) || points < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid needs 0 < omega_min < omega_max and at least 2 points, got [{omega_min}, {omega_max}] x {points}"
            )));
        }
        let (a, b) = (omega_min.ln(), omega_max.ln());
        let step = (b - a) / (points - 1) as f64;
        let mut omegas: Vec<f64> = (0..points).map(|i| (a + step * i as f64).exp()).collect();
        omegas[0] = omega_min;
        omegas[points - 1] = omega_max;
        Ok(Self { omegas })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        Self::log_spaced(spec.omega_min, spec.omega_max, spec.points)
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.omegas[0]
    }

    pub fn max(&self) -> f64 {
        self.omegas[self.omegas.len() - 1]
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self::from_spec(&GridSpec::default()).expect("default grid is valid")
    }
}

#[derive(Debug, Clone)]
pub struct BandwidthResult {
    pub omega_bw: f64,
    /// Minimum singular value of `L(j omega_bw)`.
    pub sigma_min: f64,
    /// Triplets with `sigma <= (1 + delta_bw) sigma_min`, ascending.
    pub cluster: Vec<SingularTriplet>,
    /// Grid intervals of later downward crossings (diagnostics only).
    pub later_crossings: Vec<f64>,
}

/// Bandwidth of an arbitrary loop-gain function on a grid.
pub fn bandwidth_of<F>(loop_fn: F, grid: &FrequencyGrid, delta_bw: f64) -> Result<BandwidthResult>
where
    F: Fn(f64) -> Result<CMatrix> + Sync,
{
    let excess = |w: f64| -> Result<f64> { Ok(sigma_min(&loop_fn(w)?) - 1.0) };
    let values: Vec<f64> = grid.omegas().par_iter().map(|&w| excess(w)).collect::<Result<_>>()?;
    let crossings: Vec<usize> = (0..values.len() - 1).filter(|&i| values[i] > 0.0 && values[i + 1] <= 0.0).collect();
    let Some(&first) = crossings.first() else {
        return Err(Error::NoCrossover { omega_min: grid.min(), omega_max: grid.max() });
    };
    let (mut lo, mut hi) = (grid.omegas()[first], grid.omegas()[first + 1]);
    let (mut f_lo, mut f_hi) = (values[first], values[first + 1]);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        let f = excess(mid)?;
        if f > 0.0 {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
            f_hi = f;
        }
    }
    let omega_bw = if f_lo.abs() <= f_hi.abs() { lo } else { hi };
    let l = loop_fn(omega_bw)?;
    let mut triplets = svd_triplets(&l);
    triplets.reverse();
    let smin = triplets[0].sigma;
    let cluster: Vec<SingularTriplet> = triplets.into_iter().filter(|t| t.sigma <= (1.0 + delta_bw) * smin).collect();
    let later_crossings = crossings[1..].iter().map(|&i| grid.omegas()[i]).collect();
    Ok(BandwidthResult { omega_bw, sigma_min: smin, cluster, later_crossings })
}

/// Loop gain `G(j omega) C(j omega)`.
pub fn loop_matrix(plant: &DecoupledPlant, controller: &dyn LoopController, omega: f64) -> Result<CMatrix> {
    let g = crate::lti::eval_plant(plant, omega)?;
    let c = controller.response(omega)?;
    Ok(crate::lti::loop_gain(&g, &c)?.value)
}

/// Sensitivity `(I + G C)^-1` at `omega`.
pub fn sensitivity_matrix(plant: &DecoupledPlant, controller: &dyn LoopController, omega: f64) -> Result<CMatrix> {
    let l = loop_matrix(plant, controller, omega)?;
    Ok(eval_sensitivity(&FrequencyResponse { omega, value: l })?.value)
}

pub fn compute_bandwidth(
    plant: &DecoupledPlant,
    controller: &dyn LoopController,
    grid: &FrequencyGrid,
    delta_bw: f64,
) -> Result<BandwidthResult> {
    check_dims(plant, controller)?;
    bandwidth_of(|w| loop_matrix(plant, controller, w), grid, delta_bw)
}

fn check_dims(plant: &DecoupledPlant, controller: &dyn LoopController) -> Result<()> {
    if plant.n_channels() != controller.n_channels() {
        return Err(Error::DimensionMismatch(format!(
            "plant has {} channels but controller has {}",
            plant.n_channels(),
            controller.n_channels()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SensitivityPeak {
    pub omega: f64,
    pub magnitude: f64,
    /// Triplets of `S(j omega)` with `sigma >= (1 - delta_h) sigma_max`, descending.
    pub cluster: Vec<SingularTriplet>,
}

#[derive(Debug, Clone)]
pub struct SensitivityPeaks {
    pub hinf: f64,
    /// Peaks within `delta_h` of the norm, ascending in frequency.
    pub peaks: Vec<SensitivityPeak>,
}

fn golden_max<F>(g: &F, a: f64, b: f64, start: (f64, f64)) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<f64>,
{
    const R: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut best = start;
    let mut c = b - R * (b - a);
    let mut d = a + R * (b - a);
    let mut fc = g(c)?;
    let mut fd = g(d)?;
    for (x, f) in [(c, fc), (d, fd)] {
        if f > best.1 {
            best = (x, f);
        }
    }
    for _ in 0..GOLDEN_MAX_ITER {
        if (b - a).abs() < GOLDEN_LOG_TOL {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - R * (b - a);
            fc = g(c)?;
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + R * (b - a);
            fd = g(d)?;
            if fd > best.1 {
                best = (d, fd);
            }
        }
    }
    Ok(best)
}

/// H-infinity peaks of an arbitrary sensitivity function on a grid.
pub fn sensitivity_peaks_of<F>(s_fn: F, grid: &FrequencyGrid, delta_h: f64) -> Result<SensitivityPeaks>
where
    F: Fn(f64) -> Result<CMatrix> + Sync,
{
    let w = grid.omegas();
    let values: Vec<f64> = w.par_iter().map(|&x| Ok(sigma_max(&s_fn(x)?))).collect::<Result<_>>()?;
    let n = values.len();
    let grid_max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || values[i] >= values[i - 1];
            let right = i == n - 1 || values[i] > values[i + 1];
            left && right && values[i] >= 0.5 * grid_max
        })
        .collect();
    let log_sigma = |x: f64| -> Result<f64> { Ok(sigma_max(&s_fn(x.exp())?)) };
    let refined: Vec<(f64, f64)> = candidates
        .par_iter()
        .map(|&i| {
            let a = w[i.saturating_sub(1)].ln();
            let b = w[(i + 1).min(n - 1)].ln();
            let x0 = w[i].ln();
            let (x, f) = golden_max(&log_sigma, a, b, (x0, values[i]))?;
            Ok((if x == x0 { w[i] } else { x.exp() }, f))
        })
        .collect::<Result<_>>()?;
    let hinf = refined.iter().map(|p| p.1).fold(grid_max, f64::max);
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for &(omega, mag) in &refined {
        if mag < (1.0 - delta_h) * hinf {
            continue;
        }
        if let Some(dup) = kept.iter_mut().find(|k| (k.0.ln() - omega.ln()).abs() < 1e-6) {
            if mag > dup.1 {
                *dup = (omega, mag);
            }
            continue;
        }
        kept.push((omega, mag));
    }
    kept.sort_by(|a, b| a.0.total_cmp(&b.0));
    let peaks = kept
        .into_iter()
        .map(|(omega, magnitude)| {
            let s = s_fn(omega)?;
            let triplets = svd_triplets(&s);
            let top = triplets[0].sigma;
            let cluster = triplets.into_iter().filter(|t| t.sigma >= (1.0 - delta_h) * top).collect();
            Ok(SensitivityPeak { omega, magnitude, cluster })
        })
        .collect::<Result<_>>()?;
    Ok(SensitivityPeaks { hinf, peaks })
}

/// `||S||_inf` with its peak set; fails on an unstable closed loop.
pub fn compute_sensitivity_peaks(
    plant: &DecoupledPlant,
    controller: &dyn LoopController,
    grid: &FrequencyGrid,
    delta_h: f64,
) -> Result<SensitivityPeaks> {
    check_dims(plant, controller)?;
    let stability = check_stability(plant, controller)?;
    if !stability.stable {
        return Err(Error::Unstable { abscissa: stability.abscissa });
    }
    sensitivity_peaks_of(|w| sensitivity_matrix(plant, controller, w), grid, delta_h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub stable: bool,
    /// Largest real part of the closed-loop eigenvalues.
    pub abscissa: f64,
}

/// Closed-loop state matrix for `u = C(-y)` with plant states first.
pub fn closed_loop_matrix(plant: &DecoupledPlant, controller: &dyn LoopController) -> Result<DMatrix<f64>> {
    check_dims(plant, controller)?;
    let p = plant.state_space();
    let k = controller.realization();
    let (np, nk) = (p.n_states(), k.n_states());
    let mut a = DMatrix::zeros(np + nk, np + nk);
    a.view_mut((0, 0), (np, np)).copy_from(&(&p.a - &p.b * &k.d * &p.c));
    if nk > 0 {
        a.view_mut((0, np), (np, nk)).copy_from(&(&p.b * &k.c));
        a.view_mut((np, 0), (nk, np)).copy_from(&(-(&k.b * &p.c)));
        a.view_mut((np, np), (nk, nk)).copy_from(&k.a);
    }
    Ok(a)
}

/// Diagonal similarity balancing (Parlett-Reinsch) with power-of-two factors.
pub fn balance(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < 100 {
        converged = true;
        sweeps += 1;
        for i in 0..n {
            let c: f64 = (0..n).filter(|&j| j != i).map(|j| m[(j, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let (mut cc, mut rr) = (c, r);
            while cc < rr / 2.0 {
                cc *= 2.0;
                rr /= 2.0;
                f *= 2.0;
            }
            while cc >= rr * 2.0 {
                cc /= 2.0;
                rr *= 2.0;
                f /= 2.0;
            }
            if (cc + rr) < 0.95 * s {
                converged = false;
                for j in 0..n {
                    m[(i, j)] /= f;
                    m[(j, i)] *= f;
                }
            }
        }
    }
    m
}

/// Eigenvalues of a real matrix after balancing.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<num_complex::Complex64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let b = balance(a);
    for eps in [f64::EPSILON, 1e-15, 1e-14, 1e-13, 1e-12] {
        if let Some(schur) = Schur::try_new(b.clone(), eps, 10_000) {
            return Ok(schur.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(Error::InvalidConfig("eigenvalue iteration did not converge".into()))
}

/// Closed-loop stability from the spectral abscissa of the combined realization.
pub fn check_stability(plant: &DecoupledPlant, controller: &dyn LoopController) -> Result<StabilityReport> {
    let a = closed_loop_matrix(plant, controller)?;
    let eig = eigenvalues(&a)?;
    let abscissa = eig.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    let radius = eig.iter().map(|e| e.norm()).fold(1.0, f64::max);
    Ok(StabilityReport { stable: abscissa < -1e-10 * radius, abscissa })
}

/// One row of the plot-ready frequency sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub omega: f64,
    /// Singular values of `L`, descending.
    pub sv_loop: Vec<f64>,
    /// Singular values of `S`, descending; `None` where `I + L` is singular.
    pub sv_sensitivity: Option<Vec<f64>>,
    /// `|L_ii|` per channel.
    pub diag_loop: Vec<f64>,
    /// `|G_ii|` per channel.
    pub diag_plant: Vec<f64>,
    /// `max_{i != j} |G_ij|`.
    pub coupling_envelope: f64,
}

pub fn frequency_sweep(plant: &DecoupledPlant, controller: &dyn LoopController, grid: &FrequencyGrid) -> Result<Vec<SweepRow>> {
    check_dims(plant, controller)?;
    grid.omegas()
        .par_iter()
        .map(|&omega| {
            let g = crate::lti::eval_plant(plant, omega)?.value;
            let l = &g * controller.response(omega)?.value;
            let n = l.nrows();
            let sv_sensitivity = crate::linalg::guarded_inverse(&(identity(n) + &l), 1e-13).map(|s| singular_values(&s));
            let mut env: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        env = env.max(g[(i, j)].norm());
                    }
                }
            }
            Ok(SweepRow {
                omega,
                sv_loop: singular_values(&l),
                sv_sensitivity,
                diag_loop: (0..n).map(|i| l[(i, i)].norm()).collect(),
                diag_plant: (0..n).map(|i| g[(i, i)].norm()).collect(),
                coupling_envelope: env,
            })
        })
        .collect()
}
