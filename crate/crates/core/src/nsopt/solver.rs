use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::linesearch::{weak_wolfe, LineSearchParams};
use super::problem::{Problem, ProblemPoint};
use super::qp::{steer, LinearizedConstraint, SteeringParams};
use crate::subgrad::{min_norm_direction, min_norm_point, SubdifferentialSet};

/// How the solver uses a subgradient set: the reduced vector feeds the
/// quasi-Newton update and the stationarity cache, the model set feeds the
/// direction subproblem and the line search slope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DirectionMode {
    /// First member of each set.
    #[serde(rename = "raw")]
    RawSubgradient,
    /// Min-norm element of each set's convex hull.
    #[serde(rename = "qp")]
    QpSteepest,
}

impl DirectionMode {
    pub fn reduce(self, set: &SubdifferentialSet) -> Vec<f64> {
        match self {
            Self::RawSubgradient => set.first().to_vec(),
            Self::QpSteepest => min_norm_direction(set).direction,
        }
    }

    /// Members the direction subproblem sees.
    pub fn model(self, set: &SubdifferentialSet) -> Vec<Vec<f64>> {
        match self {
            Self::RawSubgradient => vec![set.first().to_vec()],
            Self::QpSteepest => set.gradients().to_vec(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::RawSubgradient => "raw",
            Self::QpSteepest => "qp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Converged,
    NotConvergedBudget,
    LinesearchFailed,
    InitialUnstable,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "CONVERGED",
            Self::NotConvergedBudget => "NOT_CONVERGED_BUDGET",
            Self::LinesearchFailed => "LINESEARCH_FAILED",
            Self::InitialUnstable => "INITIAL_UNSTABLE",
        }
    }
}

/// Options of the BFGS-SQP iteration itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub c_v: f64,
    pub c_mu: f64,
    pub mu0: f64,
    pub max_mu_reductions: usize,
    pub stationarity_tol: f64,
    pub feasibility_tol: f64,
    pub max_iter: usize,
    pub max_fun_evals: usize,
    pub direction_mode: DirectionMode,
    /// Defaults to `min(2m, 40)`.
    pub cache_size: Option<usize>,
    pub cache_radius: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_bisections: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            c_v: 0.7,
            c_mu: 0.3,
            mu0: 1.0,
            max_mu_reductions: 10,
            stationarity_tol: 1e-6,
            feasibility_tol: 1e-8,
            max_iter: 500,
            max_fun_evals: 5000,
            direction_mode: DirectionMode::QpSteepest,
            cache_size: None,
            cache_radius: 1e-4,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.5,
            max_bisections: 50,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::InvalidConfig(m.into()));
        if !(self.c_v > 0.0 && self.c_v < 1.0 && self.c_mu > 0.0 && self.c_mu < 1.0) {
            return bad("c_v and c_mu must lie in (0, 1)");
        }
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return bad("mu0 must be positive");
        }
        if !(self.stationarity_tol >= 0.0 && self.feasibility_tol >= 0.0 && self.cache_radius >= 0.0) {
            return bad("tolerances and cache radius must be nonnegative");
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return bad("line search needs 0 < wolfe_c1 < wolfe_c2 < 1");
        }
        if self.cache_size == Some(0) {
            return bad("cache_size must be positive");
        }
        Ok(())
    }

    fn cache_capacity(&self, m: usize) -> usize {
        self.cache_size.unwrap_or_else(|| (2 * m).min(40)).max(1)
    }
}

/// One row of the convergence history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub f: f64,
    pub v: f64,
    pub mu: f64,
    pub step: f64,
    pub direction_norm: f64,
    pub evaluations: usize,
    pub stationarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: Status,
    /// Reported point: the certified iterate when converged, otherwise the best one seen.
    pub x: Vec<f64>,
    pub f: f64,
    pub v: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub mu: f64,
    pub mu_reductions: usize,
    pub stationarity: f64,
    pub history: Vec<IterationRecord>,
}

/// A problem point with its subgradient sets prepared for `mode`.
#[derive(Debug, Clone)]
struct Iterate {
    x: DVector<f64>,
    f: f64,
    grad_f: DVector<f64>,
    c: Vec<f64>,
    /// Reduced constraint gradients as columns.
    a: DMatrix<f64>,
    v: f64,
    f_model: Vec<DVector<f64>>,
    c_model: Vec<LinearizedConstraint>,
}

impl Iterate {
    fn from_point(x: DVector<f64>, p: ProblemPoint, mode: DirectionMode) -> Option<Self> {
        let m = x.len();
        let vecs = |set: &SubdifferentialSet| mode.model(set).into_iter().map(DVector::from_vec).collect::<Vec<_>>();
        let grad_f = DVector::from_vec(mode.reduce(&p.objective_set));
        let mut a = DMatrix::zeros(m, p.constraints.len());
        for (i, con) in p.constraints.iter().enumerate() {
            a.set_column(i, &DVector::from_vec(mode.reduce(&con.set)));
        }
        let c: Vec<f64> = p.constraints.iter().map(|k| k.value).collect();
        let v = c.iter().map(|x| x.max(0.0)).sum();
        let f_model = vecs(&p.objective_set);
        let c_model: Vec<LinearizedConstraint> = p.constraints.iter().map(|k| LinearizedConstraint { value: k.value, gradients: vecs(&k.set) }).collect();
        let finite = p.objective.is_finite()
            && grad_f.iter().all(|g| g.is_finite())
            && a.iter().all(|g| g.is_finite())
            && c.iter().all(|x| x.is_finite())
            && f_model.iter().chain(c_model.iter().flat_map(|k| &k.gradients)).all(|g| g.iter().all(|x| x.is_finite()));
        finite.then_some(Self { x, f: p.objective, grad_f, c, a, v, f_model, c_model })
    }

    /// Slope of the penalty model along `d`: the largest slope over each set.
    fn model_slope(&self, mu: f64, d: &DVector<f64>) -> f64 {
        let max_dot = |set: &[DVector<f64>]| set.iter().map(|g| g.dot(d)).fold(f64::NEG_INFINITY, f64::max);
        let mut slope = mu * max_dot(&self.f_model);
        for k in &self.c_model {
            if k.value > 0.0 {
                slope += max_dot(&k.gradients);
            } else if k.value == 0.0 {
                slope += max_dot(&k.gradients).max(0.0);
            }
        }
        slope
    }

    /// Members of the subdifferential of `v`: one model gradient per violated
    /// constraint, and zero or one per constraint within `active_tol` of zero.
    fn violation_gradients(&self, active_tol: f64) -> Vec<DVector<f64>> {
        let mut out = vec![DVector::zeros(self.x.len())];
        for k in &self.c_model {
            if k.value > active_tol {
                out = out.iter().flat_map(|w| k.gradients.iter().map(move |a| w + a)).take(MAX_VIOLATION_GRADIENTS).collect();
            } else if k.value >= -active_tol {
                let with: Vec<_> = out.iter().flat_map(|w| k.gradients.iter().map(move |a| w + a)).collect();
                out.extend(with);
                out.truncate(MAX_VIOLATION_GRADIENTS);
            }
        }
        out
    }

    fn penalty(&self, mu: f64) -> f64 {
        mu * self.f + self.v
    }

    fn penalty_gradient(&self, mu: f64) -> DVector<f64> {
        let mut g = &self.grad_f * mu;
        for (i, &ci) in self.c.iter().enumerate() {
            if ci > 0.0 {
                g += self.a.column(i);
            }
        }
        g
    }
}

/// Accepted steps shorter than this, relative to the iterate, count as line-search failures.
const STALL_TOL: f64 = 1e-14;

/// Combinations of violated-constraint gradients kept per cached point.
const MAX_VIOLATION_GRADIENTS: usize = 64;

/// A cached point with its objective gradients and violation gradients.
type CacheEntry = (DVector<f64>, Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Norm of the min-norm element of the hull of the cached penalty gradients
/// `mu grad f + grad v` whose points lie within `radius` of `x`.
pub(crate) fn stationarity_measure(cache: &VecDeque<CacheEntry>, x: &DVector<f64>, mu: f64, radius: f64) -> f64 {
    let vectors: Vec<Vec<f64>> = cache
        .iter()
        .filter(|(xk, _, _)| (xk - x).norm() <= radius)
        .flat_map(|(_, gf, gv)| gf.iter().flat_map(move |g| gv.iter().map(move |w| (g * mu + w).as_slice().to_vec())))
        .collect();
    if vectors.is_empty() {
        return f64::INFINITY;
    }
    min_norm_point(&vectors).norm()
}

/// BFGS-SQP with penalty steering on `problem`, started from `x0`.
pub fn solve<P: Problem + ?Sized>(problem: &P, x0: &[f64], options: &SolverOptions) -> SolveResult {
    let m = problem.dimension();
    let mode = options.direction_mode;
    let ls = LineSearchParams { c1: options.wolfe_c1, c2: options.wolfe_c2, max_bisections: options.max_bisections, ..Default::default() };
    let steering = SteeringParams { c_v: options.c_v, c_mu: options.c_mu, max_reductions: options.max_mu_reductions };
    let eval = |x: &DVector<f64>| -> Option<Iterate> {
        let p = problem.evaluate(x.as_slice())?;
        Iterate::from_point(x.clone(), p, mode)
    };

    let mut evaluations = 1;
    let x0 = DVector::from_column_slice(x0);
    let Some(mut cur) = eval(&x0) else {
        return SolveResult {
            status: Status::InitialUnstable,
            x: x0.as_slice().to_vec(),
            f: f64::INFINITY,
            v: f64::INFINITY,
            iterations: 0,
            evaluations,
            mu: options.mu0,
            mu_reductions: 0,
            stationarity: f64::INFINITY,
            history: Vec::new(),
        };
    };

    let capacity = options.cache_capacity(m);
    let mut cache = VecDeque::with_capacity(capacity);
    let push = |cache: &mut VecDeque<_>, it: &Iterate| {
        if cache.len() == capacity {
            cache.pop_front();
        }
        cache.push_back((it.x.clone(), it.f_model.clone(), it.violation_gradients(options.feasibility_tol)));
    };
    push(&mut cache, &cur);

    let mut mu = options.mu0;
    let mut mu_reductions = 0;
    let mut h = DMatrix::<f64>::identity(m, m);
    let mut h_scaled = false;
    let mut best = cur.clone();
    let better = |a: &Iterate, b: &Iterate, tol: f64| -> bool {
        match (a.v <= tol, b.v <= tol) {
            (true, true) => a.f < b.f,
            (true, false) => true,
            (false, true) => false,
            (false, false) => a.v < b.v,
        }
    };

    let mut stat = stationarity_measure(&cache, &cur.x, mu, options.cache_radius);
    let mut history = vec![IterationRecord { iteration: 0, f: cur.f, v: cur.v, mu, step: 0.0, direction_norm: 0.0, evaluations, stationarity: stat }];
    let finish = |status: Status, cur: &Iterate, best: &Iterate, iterations, evaluations, mu, mu_reductions, stat, history| {
        let out = if status == Status::Converged { cur } else { best };
        SolveResult {
            status,
            x: out.x.as_slice().to_vec(),
            f: out.f,
            v: out.v,
            iterations,
            evaluations,
            mu,
            mu_reductions,
            stationarity: stat,
            history,
        }
    };
    if stat <= options.stationarity_tol && cur.v <= options.feasibility_tol {
        return finish(Status::Converged, &cur, &best, 0, evaluations, mu, mu_reductions, stat, history);
    }

    let mut iteration = 0;
    while iteration < options.max_iter {
        if evaluations >= options.max_fun_evals {
            break;
        }
        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                h = DMatrix::identity(m, m);
                h_scaled = false;
            }
            let s = steer(&h, mu, &cur.f_model, &cur.c_model, &steering);
            mu = s.mu;
            mu_reductions += s.mu_reductions;
            let d = s.direction;
            let phi0 = cur.penalty(mu);
            let dphi0 = cur.model_slope(mu, &d);
            if !(dphi0 < 0.0) {
                continue;
            }
            let mut trials: Vec<(f64, Iterate)> = Vec::new();
            let result = weak_wolfe(phi0, dphi0, &ls, |t| {
                let x = &cur.x + &d * t;
                let it = eval(&x)?;
                let out = (it.penalty(mu), it.model_slope(mu, &d));
                trials.push((t, it));
                Some(out)
            });
            evaluations += result.evaluations;
            if let Some(t) = result.outcome.step() {
                let next = trials.into_iter().rev().find(|(tt, _)| *tt == t).map(|(_, it)| it).expect("accepted step was evaluated");
                if (&next.x - &cur.x).norm() > STALL_TOL * cur.x.norm().max(1.0) {
                    accepted = Some((t, d, next));
                    break;
                }
            }
        }
        let Some((t, d, next)) = accepted else {
            return finish(Status::LinesearchFailed, &cur, &best, iteration, evaluations, mu, mu_reductions, stat, history);
        };

        let s = &next.x - &cur.x;
        let y = next.penalty_gradient(mu) - cur.penalty_gradient(mu);
        let sty = s.dot(&y);
        if sty > 1e-10 * s.norm() * y.norm() {
            if !h_scaled {
                h = DMatrix::identity(m, m) * (sty / y.dot(&y));
                h_scaled = true;
            }
            let rho = 1.0 / sty;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * (1.0 + rho * yhy)) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h = (&h + h.transpose()) * 0.5;
            let min_eig = SymmetricEigen::new(h.clone()).eigenvalues.min();
            if !(min_eig >= 1e-12) {
                h = DMatrix::identity(m, m);
                h_scaled = false;
            }
        }

        cur = next;
        iteration += 1;
        push(&mut cache, &cur);
        if better(&cur, &best, options.feasibility_tol) {
            best = cur.clone();
        }
        stat = stationarity_measure(&cache, &cur.x, mu, options.cache_radius);
        history.push(IterationRecord {
            iteration,
            f: cur.f,
            v: cur.v,
            mu,
            step: t,
            direction_norm: d.norm(),
            evaluations,
            stationarity: stat,
        });
        if stat <= options.stationarity_tol && cur.v <= options.feasibility_tol {
            return finish(Status::Converged, &cur, &best, iteration, evaluations, mu, mu_reductions, stat, history);
        }
    }
    finish(Status::NotConvergedBudget, &cur, &best, iteration, evaluations, mu, mu_reductions, stat, history)
}
