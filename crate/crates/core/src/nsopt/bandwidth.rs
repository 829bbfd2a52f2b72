use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::problem::{ConstraintValue, Problem, ProblemPoint};
use super::solver::{solve, DirectionMode, IterationRecord, SolverOptions, Status};
use crate::controller::{ControllerParams, ControllerStructure, DecentralizedController};
use crate::error::{Error, Result};
use crate::freq::{
    check_stability, compute_bandwidth, sensitivity_matrix, sensitivity_peaks_of, BandwidthResult, FrequencyGrid, SensitivityPeaks,
    StabilityReport, DEFAULT_DELTA_BW, DEFAULT_DELTA_H,
};
use crate::lti::DecoupledPlant;
use crate::subgrad::{constraint_subgradients, objective_subgradients, SubdifferentialSet};

/// Synthesis problem settings together with the solver options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Bound on `||S||_inf`.
    pub s_max: f64,
    pub c_v: f64,
    pub c_mu: f64,
    /// Initial weight of the objective, which is in rad/s while the scaled
    /// constraints are of order one.
    pub mu0: f64,
    pub delta_bw: f64,
    pub delta_h: f64,
    pub stationarity_tol: f64,
    /// Allowed total violation of the scaled constraints at termination.
    pub feasibility_tol: f64,
    pub max_iter: usize,
    pub max_fun_evals: usize,
    pub direction_mode: DirectionMode,
    pub cache_size: Option<usize>,
    pub cache_radius: f64,
    pub beta_min: f64,
    pub zeta_min: f64,
    pub zeta_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            s_max: 2.0,
            c_v: o.c_v,
            c_mu: o.c_mu,
            mu0: 1e-3,
            delta_bw: DEFAULT_DELTA_BW,
            delta_h: DEFAULT_DELTA_H,
            stationarity_tol: o.stationarity_tol,
            feasibility_tol: o.feasibility_tol,
            max_iter: o.max_iter,
            max_fun_evals: o.max_fun_evals,
            direction_mode: o.direction_mode,
            cache_size: o.cache_size,
            cache_radius: o.cache_radius,
            beta_min: 1e-3,
            zeta_min: 1e-3,
            zeta_max: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            c_v: self.c_v,
            c_mu: self.c_mu,
            mu0: self.mu0,
            stationarity_tol: self.stationarity_tol,
            feasibility_tol: self.feasibility_tol,
            max_iter: self.max_iter,
            max_fun_evals: self.max_fun_evals,
            direction_mode: self.direction_mode,
            cache_size: self.cache_size,
            cache_radius: self.cache_radius,
            ..SolverOptions::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_max > 1.0 && self.s_max.is_finite()) {
            return Err(Error::InvalidConfig(format!("s_max must exceed 1, got {}", self.s_max)));
        }
        if !(self.delta_bw >= 0.0 && self.delta_h >= 0.0 && self.delta_h < 1.0) {
            return Err(Error::InvalidConfig("delta_bw must be nonnegative and delta_h in [0, 1)".into()));
        }
        if !(0.0 < self.beta_min && self.beta_min <= 1.0 && 0.0 < self.zeta_min && self.zeta_min <= self.zeta_max) {
            return Err(Error::InvalidConfig("notch bounds need 0 < beta_min <= 1 and 0 < zeta_min <= zeta_max".into()));
        }
        self.options().validate()
    }
}

/// Stability, bandwidth and sensitivity peaks of one closed loop.
#[derive(Debug, Clone)]
pub struct LoopAnalysis {
    pub stability: StabilityReport,
    pub bandwidth: BandwidthResult,
    pub peaks: SensitivityPeaks,
}

/// Analyzes a closed loop; fails with [`Error::Unstable`] when it is unstable.
pub fn analyze_loop(plant: &DecoupledPlant, controller: &DecentralizedController, grid: &FrequencyGrid, delta_bw: f64, delta_h: f64) -> Result<LoopAnalysis> {
    let stability = check_stability(plant, controller)?;
    if !stability.stable {
        return Err(Error::Unstable { abscissa: stability.abscissa });
    }
    let bandwidth = compute_bandwidth(plant, controller, grid, delta_bw)?;
    let peaks = sensitivity_peaks_of(|w| sensitivity_matrix(plant, controller, w), grid, delta_h)?;
    Ok(LoopAnalysis { stability, bandwidth, peaks })
}

/// `min -w_bw` subject to `||S||_inf / S_max - 1 <= 0` and the notch box
/// constraints, in normalized variables `x = theta / scaling`.
#[derive(Debug, Clone)]
pub struct BandwidthProblem {
    pub plant: DecoupledPlant,
    pub structure: ControllerStructure,
    pub scaling: Vec<f64>,
    pub grid: FrequencyGrid,
    pub config: SolverConfig,
}

impl BandwidthProblem {
    pub fn new(plant: DecoupledPlant, structure: ControllerStructure, scaling: Vec<f64>, grid: FrequencyGrid, config: SolverConfig) -> Result<Self> {
        structure.validate()?;
        config.validate()?;
        if plant.n_channels() != structure.n_channels() {
            return Err(Error::DimensionMismatch(format!(
                "plant has {} channels but the controller structure has {}",
                plant.n_channels(),
                structure.n_channels()
            )));
        }
        if scaling.len() != structure.n_params() || scaling.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidController(format!("scaling needs {} positive entries", structure.n_params())));
        }
        Ok(Self { plant, structure, scaling, grid, config })
    }

    pub fn theta(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.scaling).map(|(x, s)| x * s).collect()
    }

    pub fn internal(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.scaling).map(|(t, s)| t / s).collect()
    }

    pub fn controller(&self, x: &[f64]) -> Result<DecentralizedController> {
        let params = ControllerParams::from_vector(&self.structure, &self.theta(x), &self.scaling)?;
        DecentralizedController::new(self.structure.clone(), params)
    }

    fn evaluate_inner(&self, x: &[f64]) -> Result<ProblemPoint> {
        let controller = self.controller(x)?;
        let a = analyze_loop(&self.plant, &controller, &self.grid, self.config.delta_bw, self.config.delta_h)?;
        let s = &self.scaling;
        let objective_set = objective_subgradients(&self.plant, &controller, &a.bandwidth)?.map_components(|i, g| -g * s[i]);
        let s_max = self.config.s_max;
        let sens_set = constraint_subgradients(&self.plant, &controller, &a.peaks)?.map_components(|i, h| h * s[i] / s_max);
        let mut constraints = vec![ConstraintValue { value: a.peaks.hinf / s_max - 1.0, set: sens_set }];
        let (n, p) = (self.structure.n_channels(), self.structure.n_notches());
        let m = self.structure.n_params();
        let theta = self.theta(x);
        let unit = |k: usize, sign: f64| {
            let mut g = vec![0.0; m];
            g[k] = sign * s[k];
            SubdifferentialSet::single(g)
        };
        for j in 0..p {
            let (kb, kz) = (n + j, n + p + j);
            let (b, z) = (theta[kb], theta[kz]);
            constraints.push(ConstraintValue { value: b - 1.0, set: unit(kb, 1.0) });
            constraints.push(ConstraintValue { value: self.config.beta_min - b, set: unit(kb, -1.0) });
            constraints.push(ConstraintValue { value: self.config.zeta_min - z, set: unit(kz, -1.0) });
            constraints.push(ConstraintValue { value: z - self.config.zeta_max, set: unit(kz, 1.0) });
        }
        Ok(ProblemPoint { objective: -a.bandwidth.omega_bw, objective_set, constraints })
    }
}

impl Problem for BandwidthProblem {
    fn dimension(&self) -> usize {
        self.structure.n_params()
    }

    fn evaluate(&self, x: &[f64]) -> Option<ProblemPoint> {
        self.evaluate_inner(x).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub status: Status,
    pub direction_mode: DirectionMode,
    /// The sensitivity constraint is imposed as `||S||_inf / s_max - 1 <= 0`.
    pub constraint_form: String,
    pub s_max: f64,
    pub params: ControllerParams,
    pub omega_bw: f64,
    pub hinf: f64,
    pub initial_omega_bw: f64,
    pub initial_hinf: f64,
    pub iterations: usize,
    pub function_evaluations: usize,
    pub final_mu: f64,
    pub mu_reductions: usize,
    pub stationarity: f64,
    pub violation: f64,
    pub history: Vec<IterationRecord>,
}

/// Maximizes the bandwidth of `structure` on `plant`, starting from `initial`.
pub fn synthesize(plant: &DecoupledPlant, structure: &ControllerStructure, initial: &ControllerParams, grid: &FrequencyGrid, config: &SolverConfig) -> Result<SynthesisReport> {
    let problem = BandwidthProblem::new(plant.clone(), structure.clone(), initial.scaling.clone(), grid.clone(), config.clone())?;
    let controller0 = DecentralizedController::new(structure.clone(), initial.clone())?;
    let a0 = analyze_loop(plant, &controller0, grid, config.delta_bw, config.delta_h)?;
    let x0 = problem.internal(&initial.to_vector());
    let r = solve(&problem, &x0, &config.options());
    if r.status == Status::InitialUnstable {
        let err = problem.evaluate_inner(&x0).err();
        return Err(err.unwrap_or_else(|| Error::InvalidConfig("initial point could not be evaluated".into())));
    }
    let controller = problem.controller(&r.x)?;
    let a = analyze_loop(plant, &controller, grid, config.delta_bw, config.delta_h)?;
    Ok(SynthesisReport {
        status: r.status,
        direction_mode: config.direction_mode,
        constraint_form: "scaled".into(),
        s_max: config.s_max,
        params: controller.params,
        omega_bw: a.bandwidth.omega_bw,
        hinf: a.peaks.hinf,
        initial_omega_bw: a0.bandwidth.omega_bw,
        initial_hinf: a0.peaks.hinf,
        iterations: r.iterations,
        function_evaluations: r.evaluations,
        final_mu: r.mu,
        mu_reductions: r.mu_reductions,
        stationarity: r.stationarity,
        violation: r.v,
        history: r.history,
    })
}

/// Experimental: repeats [`synthesize`] from `restarts` extra starting points
/// whose bandwidths are perturbed by up to +-20 %, keeping the best feasible result.
pub fn synthesize_with_restarts(
    plant: &DecoupledPlant,
    structure: &ControllerStructure,
    initial: &ControllerParams,
    grid: &FrequencyGrid,
    config: &SolverConfig,
    restarts: usize,
    seed: u64,
) -> Result<SynthesisReport> {
    let mut best = synthesize(plant, structure, initial, grid, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        let mut start = initial.clone();
        for w in start.omega_c.iter_mut() {
            *w *= rng.gen_range(0.8..1.2);
        }
        let Ok(r) = synthesize(plant, structure, &start, grid, config) else { continue };
        let feasible = |r: &SynthesisReport| r.violation <= config.feasibility_tol;
        if feasible(&r) && (!feasible(&best) || r.omega_bw > best.omega_bw) {
            best = r;
        }
    }
    Ok(best)
}
