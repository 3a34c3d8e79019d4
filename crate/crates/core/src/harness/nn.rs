//! Pooled-sample neural-network comparison: a fixed labeled pool trained
//! by epochs, an unlabeled warm-up pool, a validation set and a large test
//! set, all drawn from the additive factor model.

use std::sync::Arc;

use crate::baselines::{persistence_predict, prevailing_mean_predict, random_projection, PoolSource, PpcaState};
use crate::error::{Error, Result};
use crate::fsgd::{ModelChoice, Projection, RunRecord, SgdSchedule, SgdState, Trainer, Truth};
use crate::oja::{warmup, OjaSchedule, OjaState};
use crate::streamgen::{sample_batch, BatchSource, FactorModelSpec, MiniBatch};
use crate::tensor::subspace_distance;

use super::plan::{run_plan, ExperimentPlan, GridPoint, Method, RunOptions, RunOutcome, RunSummary, Task};

/// Mean training loss over an epoch and validation loss after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochPoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

/// Stream positions of the four sample sets.
const TRAIN: u64 = 0;
const WARMUP: u64 = 1;
const VALID: u64 = 2;
const TEST: u64 = 3;

struct Data {
    spec: Arc<FactorModelSpec<f64>>,
    train: Arc<MiniBatch<f64>>,
    warm: Arc<MiniBatch<f64>>,
    valid: MiniBatch<f64>,
    test: MiniBatch<f64>,
    test_targets: Vec<f64>,
}

fn draw(plan: &ExperimentPlan, d: usize, seed: u64) -> Result<Data> {
    let nn = &plan.nn;
    let spec = Arc::new(FactorModelSpec::additive_synthetic(d, plan.run.k, seed)?);
    let test = sample_batch(&spec, nn.n_test.max(1), TEST)?;
    let test_targets = test
        .fs
        .as_ref()
        .expect("synthetic batches carry factors")
        .iter()
        .map(|f| spec.mean_response(f))
        .collect();
    Ok(Data {
        train: Arc::new(sample_batch(&spec, nn.n_train, TRAIN)?),
        warm: Arc::new(sample_batch(&spec, nn.n_warmup.max(1), WARMUP)?),
        valid: sample_batch(&spec, nn.n_valid.max(1), VALID)?,
        test,
        test_targets,
        spec,
    })
}

/// One repetition of the NN task for one method.
///
/// The SGD rate decays per mini-batch step over all epochs. Test loss is
/// measured against the noise-free response `M(f)`; validation loss
/// against the noisy responses.
pub fn run_nn(plan: &ExperimentPlan, p: &GridPoint, seed: u64) -> Result<RunOutcome> {
    let nn = &plan.nn;
    let data = draw(plan, p.d, seed)?;
    let mse_const = |c: f64, targets: &[f64]| targets.iter().map(|t| (t - c).powi(2)).sum::<f64>() / targets.len() as f64;
    if matches!(p.method, Method::Persistence | Method::PrevailingMean) {
        let c = match p.method {
            Method::Persistence => persistence_predict(&data.train.ys)?,
            _ => prevailing_mean_predict(&data.train.ys)?,
        };
        return Ok(RunOutcome {
            test_loss: Some(mse_const(c, &data.test_targets)),
            valid_loss: Some(mse_const(c, &data.valid.ys)),
            train_loss: Some(mse_const(c, &data.train.ys)),
            memory_bytes: std::mem::size_of::<f64>() * 2,
            ..RunOutcome::default()
        });
    }

    let mut source = PoolSource::new(data.train.clone(), nn.m, Some(nn.epochs), seed)?;
    let per_epoch = source.batches_per_epoch();
    let total = per_epoch * nn.epochs;
    let k_hat = p.k_hat;
    let (projection, input_dim) = match p.method {
        Method::Fsgd | Method::FsgdFrozen => {
            let mut warm_src = PoolSource::new(data.warm.clone(), nn.m, None, seed ^ 0x5EED)?;
            let q0 = warmup(&mut warm_src, nn.warmup_steps, nn.warmup_eta, k_hat, seed)?;
            let mut state = OjaState::new(q0, OjaSchedule::practical(nn.oja_c, nn.oja_c0)?)?.with_align(plan.run.align);
            if p.method == Method::FsgdFrozen {
                state = state.with_freeze(Some(plan.freeze_point(total)));
            }
            (Projection::Oja(state), k_hat)
        }
        Method::Oracle => (Projection::Oracle, plan.run.k),
        Method::Vanilla => (Projection::Raw, p.d),
        Method::RandomProj => (Projection::Fixed(random_projection(p.d, k_hat, seed)?), k_hat),
        Method::Ppca => {
            let state = PpcaState::from_warmup(vec![(*data.warm).clone()], plan.ppca_config(k_hat)?, seed)?;
            (Projection::Ppca(state), k_hat)
        }
        Method::Persistence | Method::PrevailingMean => unreachable!("handled above"),
    };
    let truth = Truth::from_spec(&data.spec, k_hat, None)?;
    let model = ModelChoice::Mlp { width: nn.width }.build(input_dim, seed)?;
    let sgd = SgdState::new(model, SgdSchedule::new(nn.c, nn.gamma)?);
    let mut trainer = Trainer::new(sgd, projection, None);

    let mut records: Vec<RunRecord> = Vec::with_capacity(total);
    let mut curve = Vec::with_capacity(nn.epochs);
    for epoch in 1..=nn.epochs {
        let mut sum = 0.0;
        let mut batches = 0usize;
        for _ in 0..per_epoch {
            let batch = source
                .next_batch()?
                .ok_or_else(|| Error::InsufficientData("sample pool ended early".into()))?;
            let t = trainer.sgd.t + 1;
            let rec = trainer.step(&batch, false).map_err(|e| e.at_step(t))?;
            sum += rec.train_loss;
            batches += 1;
            records.push(rec);
        }
        curve.push(EpochPoint {
            epoch,
            train_loss: sum / batches.max(1) as f64,
            valid_loss: trainer.mean_squared_error(&data.valid, &data.valid.ys)?,
        });
    }

    let final_dist = match (&truth, trainer.projection.frame()) {
        (Some(t), Some(q)) if q.shape() == t.v.shape() => Some(subspace_distance(q, &t.v)?),
        _ => None,
    };
    if let Some(last) = records.last_mut() {
        last.dist_qv = final_dist;
    }
    Ok(RunOutcome {
        final_error: None,
        final_dist,
        train_loss: curve.last().map(|c| c.train_loss),
        test_loss: Some(trainer.mean_squared_error(&data.test, &data.test_targets)?),
        valid_loss: Some(trainer.mean_squared_error(&data.valid, &data.valid.ys)?),
        memory_bytes: trainer.memory_bytes(),
        steps: trainer.sgd.t,
        curve: Some(curve),
        records,
    })
}

/// Runs an NN plan and additionally writes `curves.csv`: per-epoch mean
/// (over repetitions) train and validation loss, one column pair per
/// method (and per `d` when several are gridded).
pub fn nn_experiment(plan: &ExperimentPlan, options: RunOptions) -> Result<Vec<RunSummary>> {
    if plan.task != Task::NnSynth {
        return Err(Error::validation("task", "nn_experiment needs task = nn_synth"));
    }
    let summaries = run_plan(plan, options)?;
    write_curves(plan, &summaries)?;
    Ok(summaries)
}

fn write_curves(plan: &ExperimentPlan, summaries: &[RunSummary]) -> Result<()> {
    let multi_d = plan.grid.d.len() > 1;
    let mut columns: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for p in plan.points() {
        let runs: Vec<&RunSummary> = summaries
            .iter()
            .filter(|s| s.is_ok() && s.method == p.method.tag() && s.d == p.d && s.k_hat == p.k_hat)
            .collect();
        let mut sums = vec![(0.0, 0.0); plan.nn.epochs];
        let mut count = 0usize;
        for s in &runs {
            let hash = s.record_file.trim_start_matches("records_").trim_end_matches(".csv");
            let Ok(text) = std::fs::read_to_string(plan.out_dir.join(format!("curve_{hash}.csv"))) else {
                continue;
            };
            let rows: Vec<(f64, f64)> = text
                .lines()
                .skip(1)
                .filter_map(|l| {
                    let f: Vec<&str> = l.split(',').collect();
                    Some((f.get(1)?.parse().ok()?, f.get(2)?.parse().ok()?))
                })
                .collect();
            if rows.len() != sums.len() {
                continue;
            }
            sums.iter_mut().zip(&rows).for_each(|(a, b)| {
                a.0 += b.0;
                a.1 += b.1;
            });
            count += 1;
        }
        if count == 0 {
            continue;
        }
        let mut label = p.method.tag().to_string();
        if multi_d {
            label.push_str(&format!("_d{}", p.d));
        }
        if plan.grid.k_hat.len() > 1 {
            label.push_str(&format!("_k{}", p.k_hat));
        }
        let n = count as f64;
        columns.push((label, sums.into_iter().map(|(a, b)| (a / n, b / n)).collect()));
    }
    let mut text = String::from("t");
    for (label, _) in &columns {
        text.push_str(&format!(",{label}_train,{label}_valid"));
    }
    text.push('\n');
    for e in 0..plan.nn.epochs {
        text.push_str(&(e + 1).to_string());
        for (_, vals) in &columns {
            text.push_str(&format!(",{:e},{:e}", vals[e].0, vals[e].1));
        }
        text.push('\n');
    }
    super::plan::write_atomic(&plan.out_dir.join("curves.csv"), text.as_bytes())
}
