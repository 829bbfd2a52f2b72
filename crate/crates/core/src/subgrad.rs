//! Clarke subgradients of the bandwidth and of `||S||_inf`, and the
//! min-norm point of their convex hull.
//!
//! For a singular value `sigma_l` of `A(p)` with triplet `(u_l, v_l)`,
//! `d sigma_l / dp = Re[u_l^* (dA/dp) v_l]`. The bandwidth is defined
//! implicitly by `sigma_l(L(j w_bw, theta)) = 1`, so
//! `d w_bw / d theta = -(d sigma_l/d theta) / (d sigma_l/d w)`.

use nalgebra::{DMatrix, DVector};

use crate::controller::{DecentralizedController, LoopController};
use crate::error::{Error, Result};
use crate::freq::{sensitivity_matrix, BandwidthResult, SensitivityPeaks};
use crate::linalg::{sigma_sensitivity, CMatrix};
use crate::lti::DecoupledPlant;

/// Smallest accepted `|d sigma / d omega|` at the crossover.
pub const TANGENTIAL_TOL: f64 = 1e-12;

/// Where a subgradient came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub omega: f64,
    /// Position within the singular-value cluster at `omega`.
    pub sigma_index: usize,
    pub sigma: f64,
}

/// A finite set of subgradients whose convex hull approximates a Clarke subdifferential.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdifferentialSet {
    gradients: Vec<Vec<f64>>,
    provenance: Vec<Provenance>,
}

impl SubdifferentialSet {
    pub fn new(gradients: Vec<Vec<f64>>, provenance: Vec<Provenance>) -> Result<Self> {
        let Some(first) = gradients.first() else {
            return Err(Error::DimensionMismatch("subdifferential set is empty".into()));
        };
        let m = first.len();
        if gradients.iter().any(|g| g.len() != m) {
            return Err(Error::DimensionMismatch("subgradients have different lengths".into()));
        }
        if provenance.len() != gradients.len() {
            return Err(Error::DimensionMismatch("one provenance record per subgradient required".into()));
        }
        Ok(Self { gradients, provenance })
    }

    /// A smooth point: the set is the single gradient.
    pub fn single(gradient: Vec<f64>) -> Self {
        Self { gradients: vec![gradient], provenance: vec![Provenance { omega: f64::NAN, sigma_index: 0, sigma: f64::NAN }] }
    }

    pub fn gradients(&self) -> &[Vec<f64>] {
        &self.gradients
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.gradients[0].len()
    }

    pub fn first(&self) -> &[f64] {
        &self.gradients[0]
    }

    /// Applies `f(component_index, value)` to every component of every gradient.
    pub fn map_components(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        Self {
            gradients: self.gradients.iter().map(|g| g.iter().enumerate().map(|(i, &x)| f(i, x)).collect()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Subgradients of `w_bw` from the crossover cluster, given `dL/d omega` and `dL/d theta_i` at `w_bw`.
pub fn bandwidth_subgradients_with(bw: &BandwidthResult, dl_domega: &CMatrix, dl_dtheta: &[CMatrix]) -> Result<SubdifferentialSet> {
    let mut gradients = Vec::with_capacity(bw.cluster.len());
    let mut provenance = Vec::with_capacity(bw.cluster.len());
    for (l, t) in bw.cluster.iter().enumerate() {
        let slope = sigma_sensitivity(t, dl_domega);
        if !(slope.abs() >= TANGENTIAL_TOL) {
            return Err(Error::TangentialCrossing { omega: bw.omega_bw, slope });
        }
        gradients.push(dl_dtheta.iter().map(|d| -sigma_sensitivity(t, d) / slope).collect());
        provenance.push(Provenance { omega: bw.omega_bw, sigma_index: l, sigma: t.sigma });
    }
    SubdifferentialSet::new(gradients, provenance)
}

/// Subgradients `g_l` of the bandwidth `w_bw` with respect to the physical parameters.
pub fn objective_subgradients(plant: &DecoupledPlant, controller: &DecentralizedController, bw: &BandwidthResult) -> Result<SubdifferentialSet> {
    if bw.cluster.is_empty() {
        return Err(Error::DimensionMismatch("bandwidth cluster is empty".into()));
    }
    let w = bw.omega_bw;
    let g = crate::lti::eval_plant(plant, w)?.value;
    let dg = plant.response_derivative(w)?;
    let c = controller.response(w)?.value;
    let dc = controller.frequency_derivative(w)?;
    let dl_domega = &dg * &c + &g * &dc;
    let dl_dtheta: Vec<CMatrix> = (0..controller.n_params())
        .map(|i| Ok(&g * controller.param_derivative(w, i)?.value))
        .collect::<Result<_>>()?;
    bandwidth_subgradients_with(bw, &dl_domega, &dl_dtheta)
}

/// Subgradients `h_il = Re[u_il^* dS/d theta v_il]` over every peak and cluster member,
/// largest peak first.
pub fn sensitivity_subgradients_with<F>(peaks: &SensitivityPeaks, n_params: usize, ds_dtheta: F) -> Result<SubdifferentialSet>
where
    F: Fn(f64, usize) -> Result<CMatrix>,
{
    let mut gradients = Vec::new();
    let mut provenance = Vec::new();
    let mut order: Vec<_> = peaks.peaks.iter().collect();
    order.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude));
    for peak in order {
        let ds: Vec<CMatrix> = (0..n_params).map(|i| ds_dtheta(peak.omega, i)).collect::<Result<_>>()?;
        for (l, t) in peak.cluster.iter().enumerate() {
            gradients.push(ds.iter().map(|d| sigma_sensitivity(t, d)).collect());
            provenance.push(Provenance { omega: peak.omega, sigma_index: l, sigma: t.sigma });
        }
    }
    SubdifferentialSet::new(gradients, provenance)
}

/// Subgradients of `||S||_inf` using `dS/d theta = -S G (dC/d theta) S`.
pub fn constraint_subgradients(plant: &DecoupledPlant, controller: &DecentralizedController, peaks: &SensitivityPeaks) -> Result<SubdifferentialSet> {
    sensitivity_subgradients_with(peaks, controller.n_params(), |w, i| {
        let s = sensitivity_matrix(plant, controller, w)?;
        let g = crate::lti::eval_plant(plant, w)?.value;
        let dc = controller.param_derivative(w, i)?.value;
        Ok(-(&s * &g * dc * &s))
    })
}

/// Min-norm element of a convex hull together with its convex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MinNormPoint {
    pub direction: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MinNormPoint {
    pub fn norm(&self) -> f64 {
        self.direction.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `min ||sum lambda_l g_l||` over the unit simplex, by Wolfe's min-norm-point algorithm.
pub fn min_norm_direction(set: &SubdifferentialSet) -> MinNormPoint {
    min_norm_point(set.gradients())
}

/// Same as [`min_norm_direction`] on bare vectors.
pub fn min_norm_point(points: &[Vec<f64>]) -> MinNormPoint {
    let k = points.len();
    assert!(k > 0, "min-norm point of an empty set");
    let m = points[0].len();
    if k == 1 {
        return MinNormPoint { direction: points[0].clone(), weights: vec![1.0] };
    }
    let gram = DMatrix::from_fn(k, k, |i, j| points[i].iter().zip(&points[j]).map(|(a, b)| a * b).sum::<f64>());
    let scale = (0..k).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    let start = (0..k).min_by(|&a, &b| gram[(a, a)].total_cmp(&gram[(b, b)])).expect("nonempty");
    let mut weights = vec![0.0; k];
    weights[start] = 1.0;
    let mut active = vec![start];

    for _ in 0..(50 * k + 50) {
        let lam = DVector::from_column_slice(&weights);
        let gl = &gram * &lam;
        let xx = lam.dot(&gl);
        let (j, xj) = (0..k).map(|j| (j, gl[j])).min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty");
        if xj >= xx - 1e-10 * xx - 1e-15 * scale || active.contains(&j) {
            break;
        }
        active.push(j);
        loop {
            let Some(mu) = affine_min_norm(&gram, &active) else { break };
            if mu.iter().all(|&x| x > 1e-14) {
                for (&a, &x) in active.iter().zip(&mu) {
                    weights[a] = x;
                }
                break;
            }
            let mut theta: f64 = 1.0;
            for (&a, &x) in active.iter().zip(&mu) {
                if x <= 1e-14 {
                    let l = weights[a];
                    if l - x > 0.0 {
                        theta = theta.min(l / (l - x));
                    }
                }
            }
            for (&a, &x) in active.iter().zip(&mu) {
                weights[a] = (1.0 - theta) * weights[a] + theta * x;
            }
            active.retain(|&a| weights[a] > 1e-14);
            for w in weights.iter_mut() {
                if *w <= 1e-14 {
                    *w = 0.0;
                }
            }
            if active.len() <= 1 {
                if let Some(&a) = active.first() {
                    weights.iter_mut().for_each(|w| *w = 0.0);
                    weights[a] = 1.0;
                }
                break;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }
    let mut direction = vec![0.0; m];
    for (p, &w) in points.iter().zip(&weights) {
        if w != 0.0 {
            for (d, &x) in direction.iter_mut().zip(p) {
                *d += w * x;
            }
        }
    }
    MinNormPoint { direction, weights }
}

/// Weights of the min-norm point of the affine hull of `active`.
fn affine_min_norm(gram: &DMatrix<f64>, active: &[usize]) -> Option<Vec<f64>> {
    let a = active.len();
    let mut sys = DMatrix::zeros(a + 1, a + 1);
    for (r, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            sys[(r, c)] = gram[(i, j)];
        }
        sys[(r, a)] = 1.0;
        sys[(a, r)] = 1.0;
    }
    let mut rhs = DVector::zeros(a + 1);
    rhs[a] = 1.0;
    let sol = sys.clone().lu().solve(&rhs).filter(|s| s.iter().all(|x| x.is_finite())).or_else(|| sys.svd(true, true).solve(&rhs, 1e-14).ok())?;
    let mu: Vec<f64> = sol.iter().take(a).copied().collect();
    let total: f64 = mu.iter().sum();
    if !(total.is_finite() && total.abs() > 1e-300) {
        return None;
    }
    Some(mu.iter().map(|x| x / total).collect())
}
