//! Modal second-order plants, decoupling transforms and the frequency
//! responses of the plant, loop gain and sensitivity.
//!
//! A plant is stored in modal form `M x'' + D x' + K x = P u`, `y = Q x` with
//! diagonal `M`, `D`, `K`. Decoupling applies `u_hat = T_u u` and
//! `y_hat = T_y y`, giving `P_hat = P T_u^-1` and `Q_hat = T_y Q`; the first
//! `n_channels` decoupled inputs drive the controlled channels.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{guarded_inverse, identity, to_complex, CMatrix};

/// Largest accepted condition number of the force decoupling matrix.
const MAX_DECOUPLING_CONDITION: f64 = 1e12;

/// Reciprocal condition below which `I + L` counts as singular.
const SENSITIVITY_RCOND: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct ModalPlant {
    mass: Vec<f64>,
    damping: Vec<f64>,
    stiffness: Vec<f64>,
    input: DMatrix<f64>,
    output: DMatrix<f64>,
}

impl ModalPlant {
    /// `input` is `P` (`n_states x n_inputs`), `output` is `Q` (`n_outputs x n_states`).
    pub fn new(
        mass: Vec<f64>,
        damping: Vec<f64>,
        stiffness: Vec<f64>,
        input: DMatrix<f64>,
        output: DMatrix<f64>,
    ) -> Result<Self> {
        let n = mass.len();
        if n == 0 {
            return Err(Error::InvalidPlant("plant has no modal coordinates".into()));
        }
        if damping.len() != n || stiffness.len() != n {
            return Err(Error::InvalidPlant(format!(
                "mass/damping/stiffness lengths differ ({}, {}, {})",
                n,
                damping.len(),
                stiffness.len()
            )));
        }
        if let Some(i) = mass.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidPlant(format!("modal mass {i} must be positive, got {}", mass[i])));
        }
        for (name, v) in [("damping", &damping), ("stiffness", &stiffness)] {
            if let Some(i) = v.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::InvalidPlant(format!("modal {name} {i} must be nonnegative, got {}", v[i])));
            }
        }
        if input.nrows() != n {
            return Err(Error::InvalidPlant(format!(
                "P must have {n} rows (one per modal coordinate), got {}",
                input.nrows()
            )));
        }
        if output.ncols() != n {
            return Err(Error::InvalidPlant(format!(
                "Q must have {n} columns (one per modal coordinate), got {}",
                output.ncols()
            )));
        }
        if input.iter().chain(output.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidPlant("P and Q entries must be finite".into()));
        }
        Ok(Self { mass, damping, stiffness, input, output })
    }

    pub fn n_states(&self) -> usize {
        self.mass.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.input.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.output.nrows()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn damping(&self) -> &[f64] {
        &self.damping
    }

    pub fn stiffness(&self) -> &[f64] {
        &self.stiffness
    }

    pub fn input(&self) -> &DMatrix<f64> {
        &self.input
    }

    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }
}

/// A modal plant together with its decoupling transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledPlant {
    base: ModalPlant,
    t_u: DMatrix<f64>,
    t_y: DMatrix<f64>,
    n_channels: usize,
    p_hat: DMatrix<f64>,
    q_hat: DMatrix<f64>,
}

impl DecoupledPlant {
    pub fn new(base: ModalPlant, t_u: DMatrix<f64>, t_y: DMatrix<f64>, n_channels: usize) -> Result<Self> {
        let nu = base.n_inputs();
        if n_channels == 0 {
            return Err(Error::InvalidPlant("n_channels must be at least 1".into()));
        }
        if t_u.nrows() != nu || t_u.ncols() != nu {
            return Err(Error::InvalidPlant(format!(
                "T_u must be {nu}x{nu} (square in the actuator count), got {}x{}",
                t_u.nrows(),
                t_u.ncols()
            )));
        }
        if n_channels > nu {
            return Err(Error::InvalidPlant(format!(
                "n_channels = {n_channels} exceeds the number of inputs {nu}"
            )));
        }
        if t_y.nrows() != n_channels || t_y.ncols() != base.n_outputs() {
            return Err(Error::InvalidPlant(format!(
                "T_y must be {}x{}, got {}x{}",
                n_channels,
                base.n_outputs(),
                t_y.nrows(),
                t_y.ncols()
            )));
        }
        let sv = t_u.clone().singular_values();
        let (hi, lo) = (sv.max(), sv.min());
        if !(lo > 0.0 && hi / lo < MAX_DECOUPLING_CONDITION) {
            return Err(Error::InvalidPlant(format!(
                "T_u is singular or ill-conditioned (condition number {:e})",
                hi / lo
            )));
        }
        let t_u_inv = t_u
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidPlant("T_u is not invertible".into()))?;
        let p_hat = (base.input() * t_u_inv).columns(0, n_channels).into_owned();
        let q_hat = &t_y * base.output();
        Ok(Self { base, t_u, t_y, n_channels, p_hat, q_hat })
    }

    /// Plant with identity decoupling (`P` and `Q` already decoupled).
    pub fn undecoupled(base: ModalPlant) -> Result<Self> {
        let n = base.n_outputs();
        let nu = base.n_inputs();
        Self::new(base, DMatrix::identity(nu, nu), DMatrix::identity(n, n), n)
    }

    pub fn base(&self) -> &ModalPlant {
        &self.base
    }

    pub fn t_u(&self) -> &DMatrix<f64> {
        &self.t_u
    }

    pub fn t_y(&self) -> &DMatrix<f64> {
        &self.t_y
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    /// Decoupled input matrix restricted to the controlled channels.
    pub fn p_hat(&self) -> &DMatrix<f64> {
        &self.p_hat
    }

    pub fn q_hat(&self) -> &DMatrix<f64> {
        &self.q_hat
    }

    fn modal_denominators(&self, s: Complex64) -> Result<Vec<Complex64>> {
        let b = &self.base;
        (0..b.n_states())
            .map(|k| {
                let den = s * s * b.mass[k] + s * b.damping[k] + b.stiffness[k];
                let scale = (s * s * b.mass[k]).norm() + (s * b.damping[k]).norm() + b.stiffness[k];
                if den.norm() <= 1e-14 * scale || den.norm() == 0.0 {
                    Err(Error::SingularResolvent { omega: s.im, mode: k })
                } else {
                    Ok(den)
                }
            })
            .collect()
    }

    fn sandwich(&self, diag: &[Complex64]) -> CMatrix {
        let n = self.n_channels;
        CMatrix::from_fn(n, n, |i, j| {
            diag.iter()
                .enumerate()
                .map(|(k, r)| r * (self.q_hat[(i, k)] * self.p_hat[(k, j)]))
                .sum()
        })
    }

    /// `G(s) = Q_hat (s^2 M + s D + K)^-1 P_hat` at an arbitrary Laplace point.
    pub fn transfer_at(&self, s: Complex64) -> Result<CMatrix> {
        let r: Vec<Complex64> = self.modal_denominators(s)?.into_iter().map(|d| d.inv()).collect();
        Ok(self.sandwich(&r))
    }

    /// `dG(j omega)/d omega`, analytic from the modal resolvent.
    pub fn response_derivative(&self, omega: f64) -> Result<CMatrix> {
        let s = Complex64::new(0.0, omega);
        let b = &self.base;
        let dens = self.modal_denominators(s)?;
        let dr: Vec<Complex64> = dens
            .iter()
            .enumerate()
            .map(|(k, den)| {
                let dden = Complex64::new(-2.0 * omega * b.mass[k], b.damping[k]);
                -dden / (den * den)
            })
            .collect();
        Ok(self.sandwich(&dr))
    }

    pub fn state_space(&self) -> StateSpace {
        build_state_space(self)
    }
}

/// Frequency-response sample of an `n x n` transfer matrix at `s = j omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub omega: f64,
    pub value: CMatrix,
}

impl FrequencyResponse {
    pub fn dim(&self) -> usize {
        self.value.nrows()
    }
}

/// Real state-space realization `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    /// `C (sI - A)^-1 B + D` by a dense complex solve.
    pub fn transfer_at(&self, s: Complex64) -> Result<CMatrix> {
        let n = self.n_states();
        let d = to_complex(&self.d);
        if n == 0 {
            return Ok(d);
        }
        let resolvent = identity(n) * s - to_complex(&self.a);
        let x = resolvent
            .lu()
            .solve(&to_complex(&self.b))
            .ok_or(Error::SingularResolvent { omega: s.im, mode: 0 })?;
        Ok(to_complex(&self.c) * x + d)
    }

    /// Series connection `other` after `self` (output of `self` feeds `other`).
    pub fn series(&self, other: &StateSpace) -> StateSpace {
        let (n1, n2) = (self.n_states(), other.n_states());
        let n = n1 + n2;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&other.b * &self.c));
        a.view_mut((n1, n1), (n2, n2)).copy_from(&other.a);
        let mut b = DMatrix::zeros(n, self.b.ncols());
        b.view_mut((0, 0), (n1, self.b.ncols())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.b.ncols())).copy_from(&(&other.b * &self.d));
        let mut c = DMatrix::zeros(other.c.nrows(), n);
        c.view_mut((0, 0), (other.c.nrows(), n1)).copy_from(&(&other.d * &self.c));
        c.view_mut((0, n1), (other.c.nrows(), n2)).copy_from(&other.c);
        StateSpace { a, b, c, d: &other.d * &self.d }
    }

    /// Block-diagonal (parallel, non-interacting) append.
    pub fn append(&self, other: &StateSpace) -> StateSpace {
        fn block(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
            let mut m = DMatrix::zeros(x.nrows() + y.nrows(), x.ncols() + y.ncols());
            m.view_mut((0, 0), x.shape()).copy_from(x);
            m.view_mut(x.shape(), y.shape()).copy_from(y);
            m
        }
        StateSpace {
            a: block(&self.a, &other.a),
            b: block(&self.b, &other.b),
            c: block(&self.c, &other.c),
            d: block(&self.d, &other.d),
        }
    }
}

/// Which block drives the velocity row of the second-order realization.
///
/// `Damping` is the physical `-M^-1 D`. `StiffnessAsPrinted` repeats
/// `-M^-1 K` in that slot and exists only to compare against the alternative
/// reading of the realization in tests.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityBlock {
    Damping,
    StiffnessAsPrinted,
}

/// `[[0, I], [-M^-1 K, -M^-1 D]]` with input `[0; M^-1 P_hat]` and output `[Q_hat, 0]`.
pub fn build_state_space(plant: &DecoupledPlant) -> StateSpace {
    build_state_space_variant(plant, VelocityBlock::Damping)
}

#[doc(hidden)]
pub fn build_state_space_variant(plant: &DecoupledPlant, velocity: VelocityBlock) -> StateSpace {
    let b = plant.base();
    let n = b.n_states();
    let nc = plant.n_channels();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        a[(k, n + k)] = 1.0;
        a[(n + k, k)] = -b.stiffness[k] / b.mass[k];
        a[(n + k, n + k)] = match velocity {
            VelocityBlock::Damping => -b.damping[k] / b.mass[k],
            VelocityBlock::StiffnessAsPrinted => -b.stiffness[k] / b.mass[k],
        };
    }
    let mut bm = DMatrix::zeros(2 * n, nc);
    for k in 0..n {
        for j in 0..nc {
            bm[(n + k, j)] = plant.p_hat()[(k, j)] / b.mass[k];
        }
    }
    let mut c = DMatrix::zeros(nc, 2 * n);
    c.view_mut((0, 0), (nc, n)).copy_from(plant.q_hat());
    StateSpace { a, b: bm, c, d: DMatrix::zeros(nc, nc) }
}

/// `G(j omega)`; requires `omega > 0`.
pub fn eval_plant(plant: &DecoupledPlant, omega: f64) -> Result<FrequencyResponse> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::InvalidConfig(format!("frequency must be positive and finite, got {omega}")));
    }
    Ok(FrequencyResponse { omega, value: plant.transfer_at(Complex64::new(0.0, omega))? })
}

/// `L = G C` at the controller sample's frequency.
pub fn eval_loop(plant: &DecoupledPlant, controller: &FrequencyResponse) -> Result<FrequencyResponse> {
    let g = eval_plant(plant, controller.omega)?;
    loop_gain(&g, controller)
}

/// Product of two samples taken at the same frequency.
pub fn loop_gain(g: &FrequencyResponse, c: &FrequencyResponse) -> Result<FrequencyResponse> {
    if g.value.ncols() != c.value.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "G is {}x{} but C is {}x{}",
            g.value.nrows(),
            g.value.ncols(),
            c.value.nrows(),
            c.value.ncols()
        )));
    }
    if g.omega != c.omega {
        return Err(Error::DimensionMismatch(format!(
            "samples taken at different frequencies ({} vs {})",
            g.omega, c.omega
        )));
    }
    Ok(FrequencyResponse { omega: g.omega, value: &g.value * &c.value })
}

/// `S = (I + L)^-1`.
pub fn eval_sensitivity(loop_eval: &FrequencyResponse) -> Result<FrequencyResponse> {
    let l = &loop_eval.value;
    if l.nrows() != l.ncols() {
        return Err(Error::DimensionMismatch(format!("loop gain must be square, got {}x{}", l.nrows(), l.ncols())));
    }
    let rd = identity(l.nrows()) + l;
    let s = guarded_inverse(&rd, SENSITIVITY_RCOND).ok_or(Error::ClosedLoopSingular { omega: loop_eval.omega })?;
    Ok(FrequencyResponse { omega: loop_eval.omega, value: s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn siso(m: f64, d: f64, k: f64) -> DecoupledPlant {
        let base = ModalPlant::new(vec![m], vec![d], vec![k], DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0))
            .unwrap();
        DecoupledPlant::undecoupled(base).unwrap()
    }

    #[test]
    fn double_integrator_response() {
        let p = siso(1.0, 0.0, 0.0);
        for w in [0.5, 1.0, 7.0] {
            let g = eval_plant(&p, w).unwrap().value[(0, 0)];
            assert!((g - Complex64::new(-1.0 / (w * w), 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn resonance_peak_of_oscillator() {
        let w0 = 2.0 * PI * 50.0;
        let d = 2.0 * 0.01 * w0;
        let p = siso(1.0, d, w0 * w0);
        let g = eval_plant(&p, w0).unwrap().value[(0, 0)];
        assert!((g.norm() - 1.0 / (d * w0)).abs() < 1e-12 / (d * w0));
    }

    #[test]
    fn undamped_resonance_is_an_error() {
        let p = siso(2.0, 0.0, 8.0);
        assert!(matches!(eval_plant(&p, 2.0), Err(Error::SingularResolvent { .. })));
        assert!(eval_plant(&p, 0.0).is_err());
    }

    #[test]
    fn rejects_bad_modal_data() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!(ModalPlant::new(vec![0.0], vec![0.0], vec![0.0], one.clone(), one.clone()).is_err());
        assert!(ModalPlant::new(vec![1.0], vec![-1.0], vec![0.0], one.clone(), one.clone()).is_err());
        assert!(ModalPlant::new(vec![1.0], vec![0.0], vec![0.0], DMatrix::zeros(2, 1), one).is_err());
    }

    #[test]
    fn rejects_singular_decoupling() {
        let base = ModalPlant::new(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let t_u = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(DecoupledPlant::new(base, t_u, DMatrix::identity(2, 2), 2).is_err());
    }

    #[test]
    fn decoupling_uses_inverse_force_transform() {
        let base = ModalPlant::new(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let t_u = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let p = DecoupledPlant::new(base, t_u, DMatrix::identity(2, 2), 2).unwrap();
        assert!((p.p_hat() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn sensitivity_of_scalar_loop() {
        let l = FrequencyResponse { omega: 3.0, value: CMatrix::from_element(1, 1, Complex64::new(9.0, 0.0)) };
        let s = eval_sensitivity(&l).unwrap();
        assert!((s.value[(0, 0)] - Complex64::new(0.1, 0.0)).norm() < 1e-15);
        let zero = FrequencyResponse { omega: 3.0, value: CMatrix::zeros(2, 2) };
        assert_eq!(eval_sensitivity(&zero).unwrap().value, identity(2));
    }

    #[test]
    fn singular_closed_loop_reports_frequency() {
        let l = FrequencyResponse { omega: 5.0, value: CMatrix::from_element(1, 1, Complex64::new(-1.0, 0.0)) };
        match eval_sensitivity(&l) {
            Err(Error::ClosedLoopSingular { omega }) => assert_eq!(omega, 5.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn loop_dimension_mismatch() {
        let g = FrequencyResponse { omega: 1.0, value: CMatrix::zeros(2, 2) };
        let c = FrequencyResponse { omega: 1.0, value: CMatrix::zeros(3, 3) };
        assert!(matches!(loop_gain(&g, &c), Err(Error::DimensionMismatch(_))));
    }
}
