use crate::subgrad::SubdifferentialSet;

/// One inequality constraint `c(x) <= 0` evaluated at a point.
#[derive(Debug, Clone)]
pub struct ConstraintValue {
    pub value: f64,
    pub set: SubdifferentialSet,
}

/// Objective and constraints at a point, with their subgradient sets.
#[derive(Debug, Clone)]
pub struct ProblemPoint {
    pub objective: f64,
    pub objective_set: SubdifferentialSet,
    pub constraints: Vec<ConstraintValue>,
}

/// A nonsmooth, inequality-constrained minimization problem in the solver's variables.
pub trait Problem {
    fn dimension(&self) -> usize;

    /// `None` marks a point where the problem is undefined (for example an
    /// unstable closed loop); the line search treats it as `+inf`.
    fn evaluate(&self, x: &[f64]) -> Option<ProblemPoint>;
}

/// `min max(x1, x2)` subject to `x1 + x2 >= 1`, solved by `(1/2, 1/2)`.
#[derive(Debug, Clone, Copy)]
pub struct MaxOfTwo {
    /// Both pieces enter the subgradient set when `|x1 - x2| <= tol`.
    pub tol: f64,
}

impl Default for MaxOfTwo {
    fn default() -> Self {
        Self { tol: 1e-9 }
    }
}

impl Problem for MaxOfTwo {
    fn dimension(&self) -> usize {
        2
    }

    fn evaluate(&self, x: &[f64]) -> Option<ProblemPoint> {
        let (a, b) = (x[0], x[1]);
        if !(a.is_finite() && b.is_finite()) {
            return None;
        }
        let mut gradients = Vec::new();
        if a >= b - self.tol {
            gradients.push(vec![1.0, 0.0]);
        }
        if b >= a - self.tol {
            gradients.push(vec![0.0, 1.0]);
        }
        if a < b {
            gradients.reverse();
        }
        let n = gradients.len();
        let provenance = vec![crate::subgrad::Provenance { omega: f64::NAN, sigma_index: 0, sigma: f64::NAN }; n];
        Some(ProblemPoint {
            objective: a.max(b),
            objective_set: SubdifferentialSet::new(gradients, provenance).expect("nonempty"),
            constraints: vec![ConstraintValue { value: 1.0 - a - b, set: SubdifferentialSet::single(vec![-1.0, -1.0]) }],
        })
    }
}
