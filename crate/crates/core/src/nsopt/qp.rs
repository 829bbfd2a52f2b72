//! Penalty-SQP direction subproblem and the steering loop.
//!
//! The objective and every constraint come as sets of gradients `g_i` and
//! `a_jk`; each is modeled by its largest linearization. For an inverse
//! Hessian approximation `H` the subproblem is
//!
//! ```text
//! min_d  mu max_i g_i'd + sum_j max(0, max_k c_j + a_jk'd) + 1/2 d' H^-1 d
//! ```
//!
//! solved through its dual, a QP over a product of simplices, with
//! `d = -H (mu sum_i l_i g_i + sum_jk y_jk a_jk)`. Singleton sets give the
//! usual penalty-SQP subproblem; with `H = I` and no constraints the
//! direction is minus `mu` times the min-norm element of the objective set.

use nalgebra::{DMatrix, DVector};

const DUAL_SWEEPS: usize = 20_000;
const DUAL_TOL: f64 = 1e-13;

/// One constraint of the linearized model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedConstraint {
    pub value: f64,
    pub gradients: Vec<DVector<f64>>,
}

impl LinearizedConstraint {
    pub fn single(value: f64, gradient: DVector<f64>) -> Self {
        Self { value, gradients: vec![gradient] }
    }

    fn predicted(&self, d: &DVector<f64>) -> f64 {
        self.gradients.iter().map(|a| self.value + a.dot(d)).fold(f64::NEG_INFINITY, f64::max).max(0.0)
    }
}

/// `v - sum_j max(0, max_k c_j + a_jk'd)`, the violation decrease predicted by the linearization.
pub fn predicted_reduction(cons: &[LinearizedConstraint], d: &DVector<f64>) -> f64 {
    let v: f64 = cons.iter().map(|c| c.value.max(0.0)).sum();
    v - cons.iter().map(|c| c.predicted(d)).sum::<f64>()
}

/// `argmin 1/2 z'Qz + b'z` with `z >= 0` summing to one on each block of
/// consecutive indices given by `blocks`, by pairwise (SMO) coordinate moves.
pub fn simplex_qp(q: &DMatrix<f64>, b: &DVector<f64>, blocks: &[usize]) -> DVector<f64> {
    let n = b.len();
    debug_assert_eq!(blocks.iter().sum::<usize>(), n);
    let mut z = DVector::<f64>::zeros(n);
    let mut start = 0;
    let ranges: Vec<(usize, usize)> = blocks
        .iter()
        .map(|&len| {
            let r = (start, start + len);
            start += len;
            r
        })
        .collect();
    for &(lo, hi) in &ranges {
        // start at the vertex with the smallest diagonal model value
        let best = (lo..hi).min_by(|&i, &j| (0.5 * q[(i, i)] + b[i]).total_cmp(&(0.5 * q[(j, j)] + b[j]))).expect("nonempty block");
        z[best] = 1.0;
    }
    let mut grad = q * &z + b;
    for _ in 0..DUAL_SWEEPS {
        let mut worst: f64 = 0.0;
        for &(lo, hi) in &ranges {
            if hi - lo < 2 {
                continue;
            }
            // most profitable pair: raise the smallest gradient, lower the largest one with mass
            let p = (lo..hi).min_by(|&i, &j| grad[i].total_cmp(&grad[j])).unwrap();
            let Some(r) = (lo..hi).filter(|&i| z[i] > 0.0).max_by(|&i, &j| grad[i].total_cmp(&grad[j])) else { continue };
            let gap = grad[r] - grad[p];
            worst = worst.max(gap);
            if gap <= DUAL_TOL || p == r {
                continue;
            }
            let kappa = q[(p, p)] + q[(r, r)] - 2.0 * q[(p, r)];
            let delta = if kappa > 0.0 { (gap / kappa).min(z[r]) } else { z[r] };
            z[p] += delta;
            z[r] -= delta;
            for i in 0..n {
                grad[i] += delta * (q[(i, p)] - q[(i, r)]);
            }
        }
        if worst <= DUAL_TOL {
            break;
        }
    }
    z
}

/// Direction of the penalty subproblem for a given `mu`.
pub fn penalty_direction(h: &DMatrix<f64>, mu: f64, g: &[DVector<f64>], cons: &[LinearizedConstraint]) -> DVector<f64> {
    let m = h.nrows();
    // columns: objective set scaled by mu, then per constraint its gradients and a zero slack
    let mut cols: Vec<DVector<f64>> = g.iter().map(|gi| gi * mu).collect();
    let mut lin = vec![0.0; g.len()];
    let mut blocks = vec![g.len()];
    for c in cons {
        for a in &c.gradients {
            cols.push(a.clone());
            lin.push(-c.value);
        }
        cols.push(DVector::zeros(m));
        lin.push(0.0);
        blocks.push(c.gradients.len() + 1);
    }
    let w = DMatrix::from_columns(&cols);
    let hw = h * &w;
    let q = w.transpose() * &hw;
    let z = simplex_qp(&q, &DVector::from_vec(lin), &blocks);
    -(hw * z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Steering {
    pub direction: DVector<f64>,
    pub mu: f64,
    pub predicted_reduction: f64,
    pub mu_reductions: usize,
    /// The subproblem failed and `-H grad v` was used instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringParams {
    pub c_v: f64,
    pub c_mu: f64,
    pub max_reductions: usize,
}

/// Solves the subproblem and lowers `mu` until the predicted violation
/// reduction is at least `c_v` times what the feasibility-only direction achieves.
pub fn steer(h: &DMatrix<f64>, mu: f64, g: &[DVector<f64>], cons: &[LinearizedConstraint], params: &SteeringParams) -> Steering {
    let v: f64 = cons.iter().map(|c| c.value.max(0.0)).sum();
    let mut mu = mu;
    let mut d = penalty_direction(h, mu, g, cons);
    if d.iter().any(|x| !x.is_finite()) {
        let mut grad_v = DVector::zeros(h.nrows());
        for c in cons.iter().filter(|c| c.value > 0.0) {
            grad_v += &c.gradients[0];
        }
        let d = -(h * grad_v);
        let red = predicted_reduction(cons, &d);
        return Steering { direction: d, mu, predicted_reduction: red, mu_reductions: 0, fallback: true };
    }
    let mut red = predicted_reduction(cons, &d);
    let mut reductions = 0;
    if v > 0.0 && red < params.c_v * v {
        let best = predicted_reduction(cons, &penalty_direction(h, 0.0, g, cons));
        while red < params.c_v * best && reductions < params.max_reductions {
            mu *= params.c_mu;
            reductions += 1;
            d = penalty_direction(h, mu, g, cons);
            red = predicted_reduction(cons, &d);
        }
    }
    Steering { direction: d, mu, predicted_reduction: red, mu_reductions: reductions, fallback: false }
}
