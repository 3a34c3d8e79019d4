//! Worked examples and Monte Carlo checks against independent oracles.

use std::sync::Arc;

use fsgd::baselines::{offline_pca, prevailing_mean_predict, random_projection, WindowBuffer};
use fsgd::fsgd::{estimate_factors, rotated_minimizer_linear, run_fsgd, FsgdConfig};
use fsgd::models::{LinearModel, Model};
use fsgd::oja::{oja_step, random_start, track_rotation, warmup, BatchCovariance, OjaSchedule, OjaState};
use fsgd::rng::{CounterRng, Role};
use fsgd::streamgen::{oracle_subspace, sample_batch, BatchSource, Dist, FactorModelSpec, MiniBatch, SyntheticStream};
use fsgd::tensor::{subspace_distance, thin_qr, Matrix};

/// Dense second moment `n⁻¹ Σ x xᵀ` and mean, accumulated directly.
fn moments(xs: &[Vec<f64>]) -> (Matrix<f64>, Vec<f64>) {
    let d = xs[0].len();
    let mut s = vec![0.0; d * d];
    let mut mean = vec![0.0; d];
    for x in xs {
        for i in 0..d {
            mean[i] += x[i];
            let xi = x[i];
            let row = &mut s[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] += xi * x[j];
            }
        }
    }
    let n = xs.len() as f64;
    s.iter_mut().for_each(|v| *v /= n);
    mean.iter_mut().for_each(|v| *v /= n);
    (Matrix::from_vec(d, d, s).unwrap(), mean)
}

/// Top-k eigenvectors by Jacobi rotations, independent of the library's
/// PCA.
fn jacobi_top(a: &Matrix<f64>, k: usize) -> Matrix<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j].powi(2)).sum();
        if off < 1e-22 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let (mrp, mrq) = (m[r][p], m[r][q]);
                    m[r][p] = c * mrp - s * mrq;
                    m[r][q] = s * mrp + c * mrq;
                }
                for r in 0..n {
                    let (mpr, mqr) = (m[p][r], m[q][r]);
                    m[p][r] = c * mpr - s * mqr;
                    m[q][r] = s * mpr + c * mqr;
                }
                for r in 0..n {
                    let (vrp, vrq) = (v[r][p], v[r][q]);
                    v[r][p] = c * vrp - s * vrq;
                    v[r][q] = s * vrp + c * vrq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let mut out = Matrix::zeros(n, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        out.set_column(c, &(0..n).map(|r| v[r][i]).collect::<Vec<_>>());
    }
    out
}

#[test]
fn qr_of_a_random_tall_matrix() {
    let mut rng = CounterRng::new(7, Role::Test, 0, 0);
    let a: Matrix<f64> = Matrix::from_vec(8, 3, rng.gaussian_vec(24)).unwrap();
    let (q, r) = thin_qr(&a).unwrap();
    assert!(q.orthonormality_defect() < 1e-12);
    assert!(q.matmul(&r).unwrap().sub(&a).unwrap().max_abs() < 1e-12);
    let (q1, r1) = thin_qr(&Matrix::from_rows(&[[3.0f64], [4.0]])).unwrap();
    assert!((q1[(0, 0)] - 0.6).abs() < 1e-15 && (q1[(1, 0)] - 0.8).abs() < 1e-15);
    assert!((r1[(0, 0)] - 5.0).abs() < 1e-15);
}

#[test]
fn empirical_covariance_and_mean_match_the_model() {
    let (d, k) = (20, 3);
    let spec = FactorModelSpec::<f64>::linear_synthetic(d, k, 11).unwrap();
    let mut xs = Vec::with_capacity(1_000_000);
    for pos in 0..1000 {
        xs.extend(sample_batch(&spec, 1000, pos).unwrap().xs);
    }
    let (s, mean) = moments(&xs);
    // B·Cov(f)·Bᵀ + Cov(u) with Var(Unif[−0.5, 0.5]) = 1/12.
    let b = &spec.loading;
    let pop = b.matmul(&b.transpose()).unwrap().scale(1.0 / 12.0).add(&Matrix::identity(d).scale(1.0 / 12.0)).unwrap();
    let rel = s.sub(&pop).unwrap().frobenius_norm() / pop.frobenius_norm();
    assert!(rel < 0.02, "relative covariance error {rel}");
    let mean_norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(mean_norm < 0.01 * (d as f64).sqrt(), "mean norm {mean_norm}");
}

#[test]
fn oracle_subspace_of_uniform_loadings_matches_monte_carlo_eigenvectors() {
    let (d, k) = (100, 5);
    let spec = FactorModelSpec::<f64>::additive_synthetic(d, k, 3).unwrap();
    let mut xs = Vec::with_capacity(1_000_000);
    for pos in 0..1000 {
        xs.extend(sample_batch(&spec, 1000, pos).unwrap().xs);
    }
    let (s, _) = moments(&xs);
    let top = jacobi_top(&s, k);
    let dist = subspace_distance(&oracle_subspace(&spec).unwrap(), &top).unwrap();
    assert!(dist < 0.02, "distance {dist}");
}

#[test]
fn oja_with_fixed_covariance_converges_to_the_top_axes() {
    let (d, k) = (6, 2);
    let a = Matrix::diag(&[3.0, 2.0, 1.0, 0.5, 0.25, 0.125]);
    let mut state = OjaState::new(random_start::<f64>(d, k, 5).unwrap(), OjaSchedule::practical(0.1, 50.0).unwrap()).unwrap();
    for _ in 0..200 {
        state = oja_step(&state, &a, 0.1).unwrap();
    }
    let e12 = Matrix::eye(d, k);
    assert!(subspace_distance(&state.q, &e12).unwrap() < 1e-6);
}

#[test]
fn warmup_moves_towards_the_factor_space() {
    let (d, k) = (40, 3);
    let mut before = Vec::new();
    let mut after = Vec::new();
    for rep in 0..50u64 {
        let spec = Arc::new(FactorModelSpec::<f64>::linear_synthetic(d, k, rep).unwrap());
        let v = oracle_subspace(&spec).unwrap();
        let mut stream = SyntheticStream::new(spec.clone(), 5);
        before.push(subspace_distance(&random_start::<f64>(d, k, rep).unwrap(), &v).unwrap());
        let q = warmup(&mut stream, 10, 0.01, k, rep).unwrap();
        after.push(subspace_distance(&q, &v).unwrap());
    }
    let med = |v: &[f64]| fsgd::harness::median(v).unwrap();
    assert!(med(&after) < med(&before), "{} vs {}", med(&after), med(&before));
}

#[test]
fn rotated_minimizer_is_a_stationary_point_of_the_rotated_risk() {
    let (d, k) = (30, 3);
    let spec = FactorModelSpec::<f64>::linear_synthetic(d, k, 21).unwrap().with_idio(Dist::Zero);
    let v = oracle_subspace(&spec).unwrap();
    let mut rng = CounterRng::new(21, Role::Test, 1, 0);
    let r0 = thin_qr(&Matrix::from_vec(k, k, rng.gaussian_vec(k * k)).unwrap()).unwrap().0;
    let q = v.matmul(&r0).unwrap();
    let fsgd::streamgen::ResponseMap::Linear { theta_star } = &spec.response else {
        unreachable!()
    };
    let target = rotated_minimizer_linear(&q, &v, theta_star).unwrap();
    let model = LinearModel::new(target);
    let mut grad = vec![0.0; k];
    let n = 100_000;
    for pos in 0..(n / 100) as u64 {
        let b = sample_batch(&spec, 100, pos).unwrap();
        for (x, y) in b.xs.iter().zip(&b.ys) {
            let fhat = estimate_factors(&q, x).unwrap();
            let (_, g) = model.loss_grad(&fhat, *y).unwrap();
            grad.iter_mut().zip(&g.0).for_each(|(a, b)| *a += b / n as f64);
        }
    }
    let gn = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tn = theta_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(gn < 0.01 * tn, "gradient norm {gn}, |theta*| {tn}");
}

#[test]
fn offline_pca_recovers_known_axes() {
    let mut rng = CounterRng::new(3, Role::Test, 2, 0);
    let sd = [3f64.sqrt(), 2f64.sqrt(), 1.0];
    let xs: Vec<Vec<f64>> = (0..100_000).map(|_| sd.iter().map(|s| s * rng.gaussian()).collect()).collect();
    let n = xs.len();
    let mut win = WindowBuffer::new(1);
    win.push(MiniBatch::new(xs, None, vec![0.0; n]).unwrap());
    let q = offline_pca(&win, 2, None, 1).unwrap();
    assert!(subspace_distance(&q, &Matrix::eye(3, 2)).unwrap() < 0.05);
}

#[test]
fn long_oja_run_agrees_with_offline_pca_on_the_same_pool() {
    let (d, k) = (20, 3);
    let spec = FactorModelSpec::<f64>::linear_synthetic(d, k, 8).unwrap();
    let gap = spec.population_gap().unwrap();
    let batches: Vec<MiniBatch<f64>> = (0..4000).map(|p| sample_batch(&spec, 5, p).unwrap()).collect();
    let mut win = WindowBuffer::new(batches.len());
    batches.iter().for_each(|b| win.push(b.clone()));
    let pca = offline_pca(&win, k, None, 2).unwrap();
    let sched = OjaSchedule::theoretical(8.0, 50.0, gap).unwrap();
    let mut state = OjaState::new(random_start::<f64>(d, k, 2).unwrap(), sched).unwrap();
    for pass in 0..3 {
        for b in &batches {
            let eta = state.next_eta();
            state = oja_step(&state, &BatchCovariance::of(b), eta).unwrap();
        }
        let _ = pass;
    }
    let dist = subspace_distance(&state.q, &pca).unwrap();
    assert!(dist < 0.02, "distance {dist}");
}

#[test]
fn random_frames_are_nearly_orthogonal_to_a_fixed_subspace() {
    let spec = FactorModelSpec::<f64>::linear_synthetic(200, 5, 1).unwrap();
    let v = oracle_subspace(&spec).unwrap();
    let dists: Vec<f64> = (0..100)
        .map(|s| subspace_distance(&random_projection::<f64>(200, 5, s).unwrap(), &v).unwrap())
        .collect();
    assert!(fsgd::harness::median(&dists).unwrap() > 0.9);
}

#[test]
fn prevailing_mean_matches_a_two_pass_mean() {
    let mut rng = CounterRng::new(1, Role::Test, 3, 0);
    let ys: Vec<f64> = (0..1_000_000).map(|_| rng.uniform(-1.0, 3.0)).collect();
    let two_pass = {
        let m0 = ys.iter().sum::<f64>() / ys.len() as f64;
        m0 + ys.iter().map(|y| y - m0).sum::<f64>() / ys.len() as f64
    };
    assert!((prevailing_mean_predict(&ys).unwrap() - two_pass).abs() < 1e-14);
}

/// With alignment on, `R_t = polar(Q_tᵀV)` moves by O(η_t) per step and
/// the rotated-minimizer drift decays like 1/t.
#[test]
fn rotation_and_minimizer_drift_are_smooth_under_alignment() {
    let (d, k, t_end) = (40, 3, 10_000);
    let mut drift_t: Vec<Vec<f64>> = vec![Vec::new(); t_end + 1];
    let mut worst_ratio = 0.0f64;
    let mut total_motion = 0.0;
    for rep in 0..10u64 {
        let spec = FactorModelSpec::<f64>::linear_synthetic(d, k, rep).unwrap();
        let v = oracle_subspace(&spec).unwrap();
        let mut cfg = FsgdConfig::linear(spec, t_end, 0.6, rep).unwrap();
        cfg.align = true;
        let out = run_fsgd(&cfg).unwrap();
        for r in &out.records {
            if let Some(dr) = r.theta_drift {
                drift_t[r.t].push(dr * r.t as f64);
            }
        }
        // Replay the frames to measure rotation motion.
        let spec = FactorModelSpec::<f64>::linear_synthetic(d, k, rep).unwrap();
        let mut stream = SyntheticStream::new(Arc::new(spec), 5);
        let q0 = warmup(&mut stream, 10, 0.01, k, rep).unwrap();
        let mut state = OjaState::new(q0, cfg.oja).unwrap().with_align(true);
        let mut r_prev = track_rotation(&state.q, &v).unwrap();
        for t in 1..=t_end {
            let b = stream.next_batch().unwrap().unwrap();
            let eta = state.next_eta();
            state = oja_step(&state, &BatchCovariance::of(&b), eta).unwrap();
            let r = track_rotation(&state.q, &v).unwrap();
            let motion = r.sub(&r_prev).unwrap().frobenius_norm();
            if t >= 1000 {
                let a_norm = b.xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / b.len() as f64;
                worst_ratio = worst_ratio.max(motion / (eta * a_norm));
                total_motion += motion;
            }
            r_prev = r;
        }
    }
    assert!(total_motion.is_finite());
    assert!(worst_ratio < 4.0, "per-step motion / (eta |A|) reached {worst_ratio}");
    let med = |lo: usize, hi: usize| -> f64 {
        let v: Vec<f64> = (lo..=hi).filter_map(|t| fsgd::harness::median(&drift_t[t])).collect();
        v.iter().cloned().fold(0.0, f64::max)
    };
    let (early, late) = (med(100, 1000), med(1000, 10_000));
    assert!(late.is_finite() && late <= 2.0 * early, "max median drift*t: early {early}, late {late}");
}

/// Paired repetitions at the default streaming settings with the practical
/// Oja rate `0.1/(50 + t)`.
#[test]
fn larger_dimension_gives_smaller_error_with_the_practical_rate() {
    use fsgd::harness::{read_summary, run_plan, sweep_d_plan, OjaChoice, RunOptions};
    let dir = tempfile::tempdir().unwrap();
    let mut plan = sweep_d_plan(20, 0, dir.path().to_path_buf());
    plan.grid.d = vec![10, 40];
    plan.grid.gamma = vec![0.6];
    plan.grid.method = vec![fsgd::harness::Method::Fsgd];
    plan.run.oja = OjaChoice::Practical { c: 0.1, c0: 50.0 };
    plan.run.n_test = 0;
    run_plan(&plan, RunOptions { workers: fsgd::harness::default_workers(), resume: false }).unwrap();
    let rows = read_summary(&dir.path().join("summary.csv")).unwrap();
    let med = |d: usize| {
        let v: Vec<f64> = rows.iter().filter(|r| r.d == d).map(|r| r.final_error.unwrap()).collect();
        fsgd::harness::median(&v).unwrap()
    };
    let (m10, m40) = (med(10), med(40));
    assert!(m40 < m10, "median error d=40 {m40:.4e} vs d=10 {m10:.4e}");
}
