mod common;

use bwsynth::controller::{ControllerParams, ControllerStructure, DecentralizedController, PidLowpassSpec};
use bwsynth::freq::{check_stability, compute_bandwidth, loop_matrix, FrequencyGrid};
use bwsynth::linalg::sigma_min;
use bwsynth::lti::{build_state_space, eval_plant, DecoupledPlant, ModalPlant};
use bwsynth::subgrad::min_norm_point;
use common::{gradient_mismatch, random_fixture};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_plant(rng: &mut ChaCha8Rng) -> DecoupledPlant {
    let modes = rng.gen_range(2..7);
    let inputs = rng.gen_range(2..5);
    let outputs = rng.gen_range(2..5);
    let mass: Vec<f64> = (0..modes).map(|_| rng.gen_range(0.1..3.0)).collect();
    let damping: Vec<f64> = (0..modes).map(|_| rng.gen_range(0.0..5.0)).collect();
    let stiffness: Vec<f64> = (0..modes).map(|k| if k == 0 { 0.0 } else { rng.gen_range(10.0..1e5) }).collect();
    let p = DMatrix::from_fn(modes, inputs, |_, _| rng.gen_range(-1.0..1.0));
    let q = DMatrix::from_fn(outputs, modes, |_, _| rng.gen_range(-1.0..1.0));
    let n = inputs.min(outputs);
    let t_u = DMatrix::from_fn(inputs, inputs, |i, j| if i == j { 2.0 } else { rng.gen_range(-0.3..0.3) });
    let t_y = DMatrix::from_fn(n, outputs, |_, _| rng.gen_range(-1.0..1.0));
    DecoupledPlant::new(ModalPlant::new(mass, damping, stiffness, p, q).unwrap(), t_u, t_y, n).unwrap()
}

fn to_c(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

#[test]
fn plant_response_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..30 {
        let plant = random_plant(&mut rng);
        let b = plant.base();
        let n = plant.n_channels();
        let t_u_inv = plant.t_u().clone().try_inverse().unwrap();
        let p_hat = (b.input() * t_u_inv).columns(0, n).into_owned();
        let q_hat = plant.t_y() * b.output();
        for &w in &[0.3, 17.0, 2e3, 4e4] {
            let s = Complex64::new(0.0, w);
            let k = b.n_states();
            let z = DMatrix::from_fn(k, k, |i, j| if i == j { s * s * b.mass()[i] + s * b.damping()[i] + b.stiffness()[i] } else { Complex64::new(0.0, 0.0) });
            let g = to_c(&q_hat) * z.try_inverse().unwrap() * to_c(&p_hat);
            let ours = eval_plant(&plant, w).unwrap().value;
            assert!((&ours - &g).norm() <= 1e-10 * g.norm().max(1e-300), "w = {w}");
        }
    }
}

#[test]
fn state_space_realization_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let plant = random_plant(&mut rng);
        let ss = build_state_space(&plant);
        for &w in &[0.5, 40.0, 900.0] {
            let s = Complex64::new(0.0, w);
            let a = to_c(&ss.a);
            let resolvent = (DMatrix::identity(ss.n_states(), ss.n_states()).map(|x: f64| Complex64::new(x, 0.0)) * s - a).try_inverse().unwrap();
            let g = to_c(&ss.c) * resolvent * to_c(&ss.b) + to_c(&ss.d);
            let ours = plant.transfer_at(s).unwrap();
            assert!((&ours - &g).norm() <= 1e-8 * g.norm(), "w = {w}");
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    let grid = FrequencyGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 10 {
        let n = rng.gen_range(2..=4);
        let f = random_fixture(&mut rng, n);
        if let Some((bw, h)) = gradient_mismatch(&f, &grid) {
            assert!(bw <= 1e-4 && h <= 1e-4, "bandwidth {bw:e}, sensitivity {h:e}");
            checked += 1;
        }
    }
}

#[test]
fn bandwidth_matches_dense_scan() {
    let coarse = FrequencyGrid::log_spaced(0.1, 1e5, 300).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let f = random_fixture(&mut rng, 3);
        let c = f.controller(&f.theta);
        let bw = compute_bandwidth(&f.plant, &c, &coarse, 0.02).unwrap().omega_bw;
        let dense = FrequencyGrid::log_spaced(0.1, 1e5, 400_000).unwrap();
        let w = dense.omegas();
        let first = (0..w.len() - 1)
            .find(|&i| sigma_min(&loop_matrix(&f.plant, &c, w[i]).unwrap()) > 1.0 && sigma_min(&loop_matrix(&f.plant, &c, w[i + 1]).unwrap()) <= 1.0)
            .unwrap();
        assert!(w[first] <= bw * (1.0 + 1e-12) && bw <= w[first + 1] * (1.0 + 1e-12), "{bw} not in [{}, {}]", w[first], w[first + 1]);
    }
}

#[test]
fn min_norm_matches_brute_force_on_small_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let m = rng.gen_range(1..6);
        let pts: Vec<Vec<f64>> = (0..3).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ours = min_norm_point(&pts);
        let mut best = f64::INFINITY;
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps - i {
                let l = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                let d: f64 = (0..m).map(|k| (0..3).map(|p| l[p] * pts[p][k]).sum::<f64>().powi(2)).sum();
                best = best.min(d.sqrt());
            }
        }
        assert!(ours.norm() <= best + 1e-12 && best - ours.norm() < 1e-2, "{} vs {best}", ours.norm());
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            r[i + j] += x * y;
        }
    }
    r
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let get = |p: &[f64], i: usize| if i + p.len() >= n { p[i + p.len() - n] } else { 0.0 };
    (0..n).map(|i| get(a, i) + get(b, i)).collect()
}

/// Largest real part of the roots of a polynomial (highest degree first), via its companion matrix.
fn root_abscissa(p: &[f64]) -> f64 {
    let n = p.len() - 1;
    let c = DMatrix::from_fn(n, n, |i, j| if i == 0 { -p[j + 1] / p[0] } else if i == j + 1 { 1.0 } else { 0.0 });
    c.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn stability_agrees_with_characteristic_polynomial() {
    // G = 1/s^2 + sign*g/(s^2 + 2 z w s + w^2); the non-collocated variant destabilizes high crossovers
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut stable, mut unstable) = (0, 0);
    for _ in 0..60 {
        let (w, z, g): (f64, f64, f64) = (1000.0, 0.02, rng.gen_range(0.2..2.0));
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let wc = rng.gen_range(20.0..2000.0);
        let base = ModalPlant::new(
            vec![1.0, 1.0],
            vec![0.0, 2.0 * z * w],
            vec![0.0, w * w],
            DMatrix::from_column_slice(2, 1, &[1.0, g.sqrt()]),
            DMatrix::from_row_slice(1, 2, &[1.0, sign * g.sqrt()]),
        )
        .unwrap();
        let plant = DecoupledPlant::undecoupled(base).unwrap();
        let structure = ControllerStructure::new(vec![PidLowpassSpec::with_mass(1.0)], vec![]).unwrap();
        let c = DecentralizedController::new(structure.clone(), ControllerParams::unscaled(&structure, vec![wc], vec![], vec![]).unwrap()).unwrap();
        let report = check_stability(&plant, &c).unwrap();

        let a = 3.0;
        let (kp, wi, wd, wlp, zl) = (wc * wc / a, wc / (a * a), wc / a, a * wc, 0.7);
        let num_c = poly_mul(&[kp, kp * wi], &[1.0 / wd, 1.0]);
        let den_c = poly_mul(&[1.0, 0.0], &[1.0 / (wlp * wlp), 2.0 * zl / wlp, 1.0]);
        let res = [1.0, 2.0 * z * w, w * w];
        let num_g = poly_add(&res, &[sign * g, 0.0, 0.0]);
        let den_g = poly_mul(&[1.0, 0.0, 0.0], &res);
        let chi = poly_add(&poly_mul(&den_c, &den_g), &poly_mul(&num_c, &num_g));
        let oracle = root_abscissa(&chi);
        if oracle.abs() < 1e-3 * wc {
            continue;
        }
        assert_eq!(report.stable, oracle < 0.0, "wc = {wc}, sign = {sign}, g = {g}: {} vs {oracle}", report.abscissa);
        assert!((report.abscissa - oracle).abs() <= 1e-6 * wc.max(w), "{} vs {oracle}", report.abscissa);
        if oracle < 0.0 {
            stable += 1;
        } else {
            unstable += 1;
        }
    }
    assert!(stable > 5 && unstable > 5, "{stable} stable, {unstable} unstable");
}

#[test]
fn transfer_is_conjugate_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let plant = random_plant(&mut rng);
        let s = Complex64::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.1..1e3));
        let a = plant.transfer_at(s).unwrap();
        let b = plant.transfer_at(s.conj()).unwrap();
        assert!((a.map(|z| z.conj()) - b).norm() <= 1e-12 * a.norm());
    }
}
