//! Small complex linear-algebra helpers shared by the frequency-domain code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// One singular triplet `A v = sigma u` of a complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularTriplet {
    pub sigma: f64,
    pub u: CVector,
    pub v: CVector,
}

/// Singular values in descending order.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn sigma_min(a: &CMatrix) -> f64 {
    a.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn sigma_max(a: &CMatrix) -> f64 {
    a.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Full set of singular triplets, sorted by descending singular value.
pub fn svd_triplets(a: &CMatrix) -> Vec<SingularTriplet> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out: Vec<SingularTriplet> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(k, &sigma)| SingularTriplet {
            sigma,
            u: u.column(k).into_owned(),
            v: v_t.row(k).adjoint(),
        })
        .collect();
    out.sort_by(|x, y| y.sigma.total_cmp(&x.sigma));
    out
}

/// `Re[u^* A v]`, the first-order change of a simple singular value under a perturbation `A`.
pub fn sigma_sensitivity(t: &SingularTriplet, da: &CMatrix) -> f64 {
    (t.u.adjoint() * da * &t.v)[(0, 0)].re
}

pub fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|x| Complex64::new(x, 0.0))
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Inverse with a reciprocal-condition guard; `None` when `sigma_min / sigma_max` falls below `rcond`.
pub fn guarded_inverse(a: &CMatrix, rcond: f64) -> Option<CMatrix> {
    let s = singular_values(a);
    let (hi, lo) = (s[0], s[s.len() - 1]);
    if !(lo.is_finite() && hi.is_finite()) || lo <= rcond * hi {
        return None;
    }
    a.clone().lu().try_inverse()
}

pub fn is_diagonal(a: &CMatrix) -> bool {
    (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] == Complex64::new(0.0, 0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_reconstruct_matrix() {
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.0, 2.0),
                Complex64::new(-0.5, 0.3),
                Complex64::new(0.2, 0.0),
                Complex64::new(3.0, -1.0),
            ],
        );
        for t in svd_triplets(&a) {
            let lhs = &a * &t.v;
            let rhs = &t.u * Complex64::new(t.sigma, 0.0);
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn triplets_descending() {
        let a = CMatrix::from_diagonal(&CVector::from_vec(vec![
            Complex64::new(0.5, 0.0),
            Complex64::new(0.0, 4.0),
            Complex64::new(2.0, 0.0),
        ]));
        let s: Vec<f64> = svd_triplets(&a).iter().map(|t| t.sigma).collect();
        assert_eq!(s.len(), 3);
        assert!((s[0] - 4.0).abs() < 1e-14 && (s[2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn guarded_inverse_rejects_singular() {
        let a = CMatrix::from_element(2, 2, Complex64::new(1.0, 0.0));
        assert!(guarded_inverse(&a, 1e-14).is_none());
    }
}
