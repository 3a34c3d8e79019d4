//! Randomized self-check of the numerical invariants, used by the `check`
//! command. Each check draws `cases` random instances from a fixed seed.

use std::path::PathBuf;

use crate::baselines::{random_projection, rotate_coefficients};
use crate::error::Result;
use crate::models::{init_mlp, LinearModel, Model};
use crate::oja::{oja_step, random_start, track_rotation, BatchCovariance, OjaSchedule, OjaState};
use crate::rng::{CounterRng, Role};
use crate::streamgen::{sample_batch, FactorModelSpec};
use crate::tensor::{dot, subspace_distance, thin_qr, Matrix};

use super::plan::{read_summary, run_plan, ExperimentPlan, Grid, Method, RunOptions, Task};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value, or the failure reason.
    pub detail: String,
}

fn outcome(name: &'static str, worst: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst.is_finite() && worst < tol,
        detail: format!("worst {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn failed(name: &'static str, err: impl std::fmt::Display) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: false,
        detail: err.to_string(),
    }
}

fn gaussian_matrix(rng: &mut CounterRng, r: usize, c: usize) -> Matrix<f64> {
    Matrix::from_vec(r, c, rng.gaussian_vec(r * c)).expect("sizes agree")
}

/// Random orthogonal `k×k` matrix.
fn random_rotation(rng: &mut CounterRng, k: usize) -> Matrix<f64> {
    loop {
        if let Ok((q, _)) = thin_qr(&gaussian_matrix(rng, k, k)) {
            return q;
        }
    }
}

fn qr_check(seed: u64, cases: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let mut rng = CounterRng::new(seed, Role::Test, 1, i as u64);
        let d = 1 + rng.below(40);
        let k = 1 + rng.below(d.min(12));
        let a = gaussian_matrix(&mut rng, d, k);
        let (q, r) = thin_qr(&a)?;
        let recon = q.matmul(&r)?.sub(&a)?.frobenius_norm() / a.frobenius_norm();
        let mut lower: f64 = 0.0;
        for row in 0..k {
            for col in 0..row {
                lower = lower.max(r[(row, col)].abs());
            }
            if r[(row, row)] <= 0.0 {
                lower = f64::INFINITY;
            }
        }
        worst = worst.max(recon).max(q.orthonormality_defect()).max(lower);
    }
    Ok(worst)
}

fn alignment_check(seed: u64, cases: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let mut rng = CounterRng::new(seed, Role::Test, 2, i as u64);
        let d = 4 + rng.below(40);
        let k = 1 + rng.below(3.min(d - 1));
        let spec = FactorModelSpec::<f64>::linear_synthetic(d, k, seed + i as u64)?;
        let batch = sample_batch(&spec, 1 + rng.below(8), i as u64)?;
        let q = random_start(d, k, seed + i as u64)?;
        let eta = rng.uniform(0.001, 0.2);
        let plain = OjaState::new(q, OjaSchedule::practical(0.1, 50.0)?)?;
        let aligned = plain.clone().with_align(true);
        let a = BatchCovariance::of(&batch);
        let q1 = oja_step(&plain, &a, eta)?.q;
        let q2 = oja_step(&aligned, &a, eta)?.q;
        worst = worst.max(subspace_distance(&q1, &q2)?);
    }
    Ok(worst)
}

fn rotation_recovery_check(seed: u64, cases: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let mut rng = CounterRng::new(seed, Role::Test, 3, i as u64);
        let d = 2 + rng.below(40);
        let k = 1 + rng.below(4.min(d));
        let v = random_start::<f64>(d, k, seed ^ i as u64)?;
        let r0 = random_rotation(&mut rng, k);
        let r = track_rotation(&v.matmul(&r0)?, &v)?;
        worst = worst.max(r.sub(&r0)?.max_abs());
    }
    Ok(worst)
}

/// Central differences against the analytic gradient. The relative error
/// of each coordinate is taken against `max(|a|, |b|, 1e-2)`.
fn gradient_check(seed: u64, cases: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let mut rng = CounterRng::new(seed, Role::Test, 4, i as u64);
        let k = 1 + rng.below(6);
        let width = 1 + rng.below(12);
        let mut mlp = init_mlp::<f64>(k, width, seed + i as u64)?;
        for b in &mut mlp.b1 {
            *b = rng.uniform(-0.5, 0.5);
        }
        mlp.b2 = rng.uniform(-0.5, 0.5);
        let f: Vec<f64> = (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y = rng.gaussian();
        // Stay away from ReLU kinks so the finite difference is valid.
        let near_kink = (0..width).any(|j| (dot(mlp.w1.row(j), &f) + mlp.b1[j]).abs() < 1e-3);
        if !near_kink {
            worst = worst.max(fd_error(&mlp, &f, y)?);
        }
        let lin = LinearModel::new((0..k).map(|_| rng.gaussian()).collect());
        worst = worst.max(fd_error(&lin, &f, y)?);
    }
    Ok(worst)
}

fn fd_error<M: Model<f64>>(model: &M, f: &[f64], y: f64) -> Result<f64> {
    let (_, g) = model.loss_grad(f, y)?;
    let base = model.params();
    let h = 1e-6;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p)?;
        let up = (probe.predict(f)? - y).powi(2);
        p[i] = base[i] - h;
        probe.set_params(&p)?;
        let down = (probe.predict(f)? - y).powi(2);
        let fd = (up - down) / (2.0 * h);
        let a = g.0[i];
        worst = worst.max((fd - a).abs() / fd.abs().max(a.abs()).max(1e-2));
    }
    Ok(worst)
}

/// Linear model: `(Rf)ᵀ(Rθ) = fᵀθ` and `∇(Rθ; Rf) = R ∇(θ; f)`.
fn rotation_covariance_check(seed: u64, cases: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let mut rng = CounterRng::new(seed, Role::Test, 5, i as u64);
        let k = 1 + rng.below(8);
        let r = random_rotation(&mut rng, k);
        let theta: Vec<f64> = rng.gaussian_vec(k);
        let f: Vec<f64> = rng.gaussian_vec(k);
        let y = rng.gaussian();
        let m = LinearModel::new(theta.clone());
        let mr = LinearModel::new(r.mul_vec(&theta)?);
        let rf = r.mul_vec(&f)?;
        let (l1, g1) = m.loss_grad(&f, y)?;
        let (l2, g2) = mr.loss_grad(&rf, y)?;
        let rg1 = r.mul_vec(&g1.0)?;
        let gdiff = rg1.iter().zip(&g2.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max((l1 - l2).abs() / l1.max(1.0)).max(gdiff / (1.0 + l1.sqrt()));
    }
    Ok(worst)
}

/// Coefficient rotation keeps linear predictions when the span is unchanged.
fn ppca_invariance_check(seed: u64, cases: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let mut rng = CounterRng::new(seed, Role::Test, 6, i as u64);
        let d = 2 + rng.below(40);
        let k = 1 + rng.below(4.min(d));
        let q_old = random_projection::<f64>(d, k, seed + i as u64)?;
        let q_new = q_old.matmul(&random_rotation(&mut rng, k))?;
        let theta = rng.gaussian_vec(k);
        let theta_new = rotate_coefficients(&q_old, &q_new, &theta)?;
        for _ in 0..4 {
            let x: Vec<f64> = rng.gaussian_vec(d);
            let p_old = dot(&q_old.t_mul_vec(&x)?, &theta);
            let p_new = dot(&q_new.t_mul_vec(&x)?, &theta_new);
            worst = worst.max((p_old - p_new).abs() / (1.0 + p_old.abs()));
        }
    }
    Ok(worst)
}

fn scratch_dir(tag: &str) -> PathBuf {
    use std::sync::atomic::{AtomicUsize, Ordering};
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    std::env::temp_dir().join(format!(
        "fsgd-check-{}-{}-{}",
        std::process::id(),
        tag,
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ))
}

/// Small plan mixing methods; summaries from 1 and 3 workers must agree
/// outside `wall_ms`.
fn determinism_check(seed: u64) -> Result<bool> {
    let mut plan: ExperimentPlan = super::sweep_d_plan(2, seed, PathBuf::new());
    plan.name = "determinism".into();
    plan.task = Task::LinearSynth;
    plan.grid = Grid {
        d: vec![8, 12],
        gamma: vec![0.6],
        k_hat: vec![2],
        method: vec![Method::Fsgd, Method::FsgdFrozen, Method::Ppca, Method::Vanilla],
    };
    plan.run.k = 2;
    plan.run.t_max = 300;
    plan.run.n_test = 50;
    let strip = |path: &PathBuf| -> Result<Vec<String>> {
        Ok(read_summary(path)?
            .into_iter()
            .map(|mut r| {
                r.wall_ms = 0;
                r.to_csv_row()
            })
            .collect())
    };
    let mut outputs = Vec::new();
    for workers in [1, 3] {
        let dir = scratch_dir("det");
        plan.out_dir = dir.clone();
        let rows = run_plan(&plan, RunOptions { workers, resume: false });
        let summary = rows.and_then(|_| strip(&dir.join("summary.csv")));
        let _ = std::fs::remove_dir_all(&dir);
        outputs.push(summary?);
    }
    Ok(outputs[0] == outputs[1] && outputs[0].iter().all(|r| r.contains(",ok,")))
}

/// Runs every check. `cases` random instances per randomized check.
pub fn run_checks(seed: u64, cases: usize) -> Vec<CheckOutcome> {
    let numeric: [(&'static str, fn(u64, usize) -> Result<f64>, f64); 6] = [
        ("qr reconstruction and orthonormality", qr_check, 1e-12),
        ("alignment is span-neutral", alignment_check, 1e-10),
        ("rotation identity recovery", rotation_recovery_check, 1e-10),
        ("gradient vs central differences", gradient_check, 1e-5),
        ("linear model rotation covariance", rotation_covariance_check, 1e-10),
        ("ppca rotation keeps predictions", ppca_invariance_check, 1e-10),
    ];
    let mut out: Vec<CheckOutcome> = numeric
        .into_iter()
        .map(|(name, f, tol)| match f(seed, cases) {
            Ok(worst) => outcome(name, worst, tol),
            Err(e) => failed(name, e),
        })
        .collect();
    out.push(match determinism_check(seed) {
        Ok(passed) => CheckOutcome {
            name: "determinism across worker counts",
            passed,
            detail: if passed { "summaries identical".into() } else { "summaries differ".into() },
        },
        Err(e) => failed("determinism across worker counts", e),
    });
    out
}
