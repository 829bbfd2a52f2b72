//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use bwsynth::controller::{ControllerParams, DecentralizedController};
use bwsynth::freq::{bandwidth_of, compute_bandwidth, sensitivity_peaks_of, FrequencyGrid};
use bwsynth::io::{load_config, load_plant};
use bwsynth::linalg::CMatrix;
use bwsynth::nsopt::{solve, synthesize, DirectionMode, MaxOfTwo, SolverOptions, Status, SynthesisReport};
use bwsynth::plants::{two_axis, two_axis_structure, TwoAxisParams, TwoPeakSensitivity};
use bwsynth::subgrad::{min_norm_point, objective_subgradients};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("demo").join(name)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let grid = FrequencyGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut skipped) = (0, 0);
    let (mut worst_bw, mut worst_h) = (0.0f64, 0.0f64);
    while checked < 100 {
        let n = rng.gen_range(2..=7);
        let f = common::random_fixture(&mut rng, n);
        match common::gradient_mismatch(&f, &grid) {
            Some((bw, h)) => {
                worst_bw = worst_bw.max(bw);
                worst_h = worst_h.max(h);
                checked += 1;
            }
            None => skipped += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_bw <= 1e-4 && worst_h <= 1e-4 && secs < 60.0,
        format!("100 fixtures ({skipped} nonsmooth draws skipped), worst relative error bandwidth {worst_bw:.2e}, sensitivity {worst_h:.2e}, {secs:.1} s"),
    )
}

/// Exhaustive search over the simplex grid with spacing `1/steps`.
fn brute_force_min_norm(pts: &[Vec<f64>], steps: usize) -> Vec<f64> {
    let k = pts.len();
    let gram: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| dot(a, b)).collect()).collect();
    let value = |l: &[f64]| -> f64 { (0..k).map(|i| (0..k).map(|j| l[i] * l[j] * gram[i][j]).sum::<f64>()).sum() };
    let h = 1.0 / steps as f64;
    let best = (0..=steps)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, vec![0.0; k]);
            let mut visit = |l: Vec<f64>| {
                let v = value(&l);
                if v < best.0 {
                    best = (v, l);
                }
            };
            match k {
                1 => visit(vec![1.0]),
                2 => visit(vec![i as f64 * h, 1.0 - i as f64 * h]),
                3 => {
                    for j in 0..=steps - i {
                        visit(vec![i as f64 * h, j as f64 * h, (steps - i - j) as f64 * h]);
                    }
                }
                _ => {
                    for j in 0..=steps - i {
                        for m in 0..=steps - i - j {
                            visit(vec![i as f64 * h, j as f64 * h, m as f64 * h, (steps - i - j - m) as f64 * h]);
                        }
                    }
                }
            }
            best
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
    let m = pts[0].len();
    (0..m).map(|c| (0..k).map(|i| best.1[i] * pts[i][c]).sum()).collect()
}

fn min_norm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_gap, mut worst_opt) = (0.0f64, f64::INFINITY);
    for _ in 0..50 {
        let k = rng.gen_range(1..=4);
        let m = rng.gen_range(1..=8);
        let scale = 1.0 / (m as f64).sqrt();
        let pts: Vec<Vec<f64>> = (0..k).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()).collect();
        let d = min_norm_point(&pts).direction;
        let reference = brute_force_min_norm(&pts, 1000);
        let gap = norm(&d.iter().zip(&reference).map(|(a, b)| a - b).collect::<Vec<_>>());
        worst_gap = worst_gap.max(gap);
        let d2 = dot(&d, &d);
        for p in &pts {
            worst_opt = worst_opt.min(dot(&d, p) - d2 + 1e-8);
        }
    }
    outcome(
        worst_gap <= 2e-3 && worst_opt >= 0.0,
        format!("50 sets, worst distance to grid optimum {worst_gap:.2e}, worst optimality slack {:.2e}", worst_opt - 1e-8),
    )
}

fn analytic() -> Outcome {
    let grid = FrequencyGrid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_bw = 0.0f64;
    for _ in 0..20 {
        let wc: f64 = rng.gen_range(1.0..1e4);
        let bw = bandwidth_of(|w| Ok(CMatrix::from_element(1, 1, Complex64::new(0.0, -wc / w))), &grid, 0.02).map(|b| b.omega_bw).unwrap_or(f64::NAN);
        worst_bw = worst_bw.max(((bw - wc) / wc).abs());
    }
    let mut worst_first = 0.0f64;
    for _ in 0..10 {
        let (k, a): (f64, f64) = (rng.gen_range(0.5..5.0), rng.gen_range(100.0..1000.0));
        let peaks = sensitivity_peaks_of(|w| Ok(CMatrix::from_element(1, 1, Complex64::new(k, 0.0) / Complex64::new(a, w))), &grid, 0.005).unwrap();
        worst_first = worst_first.max((peaks.hinf - k / a).abs() / (k / a));
    }
    let mut worst_const = 0.0f64;
    for _ in 0..10 {
        let n = rng.gen_range(1..=5);
        let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
        let exact = (a.transpose() * &a).symmetric_eigenvalues().max().sqrt();
        let ac = a.map(|x| Complex64::new(x, 0.0));
        let peaks = sensitivity_peaks_of(|_| Ok(ac.clone()), &grid, 0.005).unwrap();
        worst_const = worst_const.max((peaks.hinf - exact).abs() / exact);
    }
    outcome(
        worst_bw <= 1e-8 && worst_first <= 1e-6 && worst_const <= 1e-6,
        format!("bandwidth {worst_bw:.2e}, first-order H-inf {worst_first:.2e}, constant-matrix H-inf {worst_const:.2e} (worst relative errors)"),
    )
}

fn nonsmooth_fixtures() -> Outcome {
    let grid = FrequencyGrid::default();
    let p = TwoAxisParams::default();
    let plant = two_axis(&p).unwrap();
    let structure = two_axis_structure(&p);
    let theta = [100.0, 100.0];
    let controller = |t: &[f64]| DecentralizedController::new(structure.clone(), ControllerParams::unscaled(&structure, t.to_vec(), vec![], vec![]).unwrap()).unwrap();
    let bw = compute_bandwidth(&plant, &controller(&theta), &grid, 0.02).unwrap();
    let set = objective_subgradients(&plant, &controller(&theta), &bw).unwrap();
    let members = set.gradients();
    let ridge = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
    // rate of increase of w_bw along a unit direction: the model value and a one-sided difference
    let rate = |u: &[f64]| -> (f64, f64) {
        let model = members.iter().map(|g| dot(g, u)).fold(f64::INFINITY, f64::min);
        let h = 1e-4;
        let moved: Vec<f64> = theta.iter().zip(u).map(|(t, d)| t + h * d).collect();
        let fd = (compute_bandwidth(&plant, &controller(&moved), &grid, 0.02).unwrap().omega_bw - bw.omega_bw) / h;
        (model, fd)
    };
    let qp = min_norm_point(members).direction;
    let qp_unit: Vec<f64> = qp.iter().map(|x| x / norm(&qp)).collect();
    let (qp_model, qp_fd) = rate(&qp_unit);
    let qp_ridge = dot(&qp_unit, &ridge);
    let raw: Vec<(f64, f64)> = members.iter().map(|g| rate(&g.iter().map(|x| x / norm(g)).collect::<Vec<_>>())).collect();
    let raw_ok = raw.iter().all(|&(m, fd)| m <= 0.5 * qp_model && fd <= 0.5 * qp_fd);
    let peaks = TwoPeakSensitivity::default().peaks(&grid, 0.005).unwrap();
    outcome(
        bw.cluster.len() == 2 && qp_ridge > 0.0 && qp_model > 0.0 && qp_fd > 0.0 && raw_ok && peaks.peaks.len() == 2,
        format!(
            "cluster size {}, QP direction ridge alignment {qp_ridge:.3}, ascent rate QP {qp_model:.4} (difference {qp_fd:.4}), raw {:?}, two-peak r = {}",
            bw.cluster.len(),
            raw.iter().map(|(m, fd)| format!("{m:.4}/{fd:.4}")).collect::<Vec<_>>(),
            peaks.peaks.len()
        ),
    )
}

fn toy() -> Outcome {
    let start = Instant::now();
    let r = solve(&MaxOfTwo::default(), &[2.0, 0.0], &SolverOptions::default());
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r.status == Status::Converged && (r.f - 0.5).abs() <= 1e-6 && r.v <= 1e-8 && r.iterations <= 100 && secs < 1.0,
        format!("{}: f = {:.10}, {} iterations, {:.2e} s", r.status.as_str(), r.f, r.iterations, secs),
    )
}

fn run_demo(configs: &[PathBuf], mode: DirectionMode) -> (SynthesisReport, f64) {
    let cfg = load_config(configs).unwrap();
    let plant = load_plant(cfg.plant.as_ref().unwrap()).unwrap();
    let structure = cfg.controller.structure().unwrap();
    let initial = cfg.controller.initial(&structure).unwrap();
    let grid = FrequencyGrid::from_spec(&cfg.grid).unwrap();
    let solver = bwsynth::nsopt::SolverConfig { direction_mode: mode, ..cfg.solver };
    let start = Instant::now();
    let r = synthesize(&plant, &structure, &initial, &grid, &solver).unwrap();
    (r, start.elapsed().as_secs_f64())
}

fn ablation() -> (Outcome, SynthesisReport) {
    let (qp, t_qp) = run_demo(&[demo("pid.json")], DirectionMode::QpSteepest);
    let (raw, t_raw) = run_demo(&[demo("pid.json")], DirectionMode::RawSubgradient);
    let agree = (qp.omega_bw - raw.omega_bw).abs() / raw.omega_bw.abs();
    let pass = qp.status == Status::Converged
        && raw.status == Status::Converged
        && agree <= 5e-3
        && qp.iterations < raw.iterations
        && qp.function_evaluations < raw.function_evaluations
        && qp.hinf <= 2.0 + 1e-6
        && t_qp + t_raw < 300.0;
    let detail = format!(
        "QP {} {:.3} rad/s in {} it / {} evals, RAW {} {:.3} rad/s in {} it / {} evals, objectives differ {:.3} %, QP ||S||inf {:.9}, {:.1} s",
        qp.status.as_str(),
        qp.omega_bw,
        qp.iterations,
        qp.function_evaluations,
        raw.status.as_str(),
        raw.omega_bw,
        raw.iterations,
        raw.function_evaluations,
        100.0 * agree,
        qp.hinf,
        t_qp + t_raw
    );
    (outcome(pass, detail), qp)
}

fn notch_benefit(pid: &SynthesisReport) -> Outcome {
    let (r, secs) = run_demo(&[demo("pid.json"), demo("notch.json")], DirectionMode::QpSteepest);
    let gain = r.omega_bw / pid.omega_bw - 1.0;
    outcome(
        gain >= 0.05 && r.hinf <= 2.0 + 1e-6 && r.violation <= 1e-8,
        format!(
            "{} {:.3} rad/s vs PID+LP {:.3} rad/s (+{:.1} %), ||S||inf {:.9}, {} it, {:.1} s",
            r.status.as_str(),
            r.omega_bw,
            pid.omega_bw,
            100.0 * gain,
            r.hinf,
            r.iterations,
            secs
        ),
    )
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("bwsynth-acceptance-{}", std::process::id()));
    let run = |name: &str| {
        let out = dir.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_bwsynth"))
            .args(["synthesize", "--config"])
            .arg(demo("pid.json"))
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        (status.status.code(), out)
    };
    let (c1, a) = run("a");
    let (c2, b) = run("b");
    let same = |f: &str| std::fs::read(a.join(f)).ok().zip(std::fs::read(b.join(f)).ok()).is_some_and(|(x, y)| x == y);
    let pass = c1 == Some(0) && c2 == Some(0) && same("report.json") && same("history.csv");
    let detail = format!("exit codes {c1:?}/{c2:?}, report.json identical: {}, history.csv identical: {}", same("report.json"), same("history.csv"));
    let _ = std::fs::remove_dir_all(&dir);
    outcome(pass, detail)
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, o: Outcome| {
        println!("{} criterion {id} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "gradient correctness", gradients());
    report(2, "min-norm QP", min_norm());
    report(3, "analytic bandwidth and H-inf", analytic());
    report(4, "nonsmoothness fixtures", nonsmooth_fixtures());
    report(5, "toy nonsmooth solve", toy());
    let (o, pid) = ablation();
    report(6, "ablation direction", o);
    report(7, "notch benefit", notch_benefit(&pid));
    report(8, "determinism", determinism());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
