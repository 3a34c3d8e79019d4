//! Factor-augmented SGD: factors are estimated from the current subspace
//! `f̂ = d^{-1/2} Qᵀx`, the model takes an SGD step on them, and the same
//! mini-batch then drives one Oja update of `Q`.

use std::path::PathBuf;
use std::sync::Arc;

use crate::baselines::PpcaState;
use crate::error::{Error, Result};
use crate::models::{batch_loss_grad, init_mlp, Gradient, LinearModel, MlpModel, Model};
use crate::oja::{oja_step, rotation_condition, track_rotation, warmup, BatchCovariance, OjaSchedule, OjaState};
use crate::scalar::Real;
use crate::streamgen::{oracle_subspace, stream_csv, BatchSource, CsvSchema, FactorModelSpec, MiniBatch, ResponseMap, SyntheticStream};
use crate::tensor::{ls_norm, s_p, subspace_distance, Matrix};

/// Polynomial SGD schedule `η_t = c·(t + t_offset − 1)^{−γ}`, `t ≥ 1`.
///
/// The default offset of 1 gives `c·t^{−γ}`; an offset of 2 gives
/// `c·(t + 1)^{−γ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSchedule<T> {
    pub c: T,
    pub gamma: T,
    pub t_offset: T,
}

impl<T: Real> SgdSchedule<T> {
    pub fn new(c: T, gamma: T) -> Result<Self> {
        Self::with_offset(c, gamma, T::one())
    }

    pub fn with_offset(c: T, gamma: T, t_offset: T) -> Result<Self> {
        if !(c > T::zero()) {
            return Err(Error::validation("c", "must be positive"));
        }
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::validation("gamma", "gamma must lie in (0,1)"));
        }
        if !(t_offset >= T::one()) {
            return Err(Error::validation("t_offset", "must be >= 1"));
        }
        Ok(SgdSchedule { c, gamma, t_offset })
    }
}

/// Step size at SGD iteration `t ≥ 1`.
pub fn sgd_eta<T: Real>(schedule: &SgdSchedule<T>, t: usize) -> T {
    let base = (T::of_usize(t) + schedule.t_offset - T::one()).max(T::one());
    schedule.c * base.powf(-schedule.gamma)
}

/// `f̂ = d^{-1/2} qᵀ x`.
pub fn estimate_factors<T: Real>(q: &Matrix<T>, x: &[T]) -> Result<Vec<T>> {
    let d = q.rows();
    let scale = T::one() / T::of_usize(d).sqrt();
    let mut f = q.t_mul_vec(x)?;
    f.iter_mut().for_each(|v| *v *= scale);
    Ok(f)
}

/// Minimizer `R·θ*` of the rotated linear least-squares risk, where `R` is
/// the Procrustes rotation taking true factors to estimated ones
/// (`f̂ ≈ R f` when `q ≈ v·Rᵀ`).
pub fn rotated_minimizer_linear<T: Real>(q: &Matrix<T>, v: &Matrix<T>, theta_star: &[T]) -> Result<Vec<T>> {
    track_rotation(q, v)?.t_mul_vec(theta_star)
}

/// Either supported model, dispatched at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel<T> {
    Linear(LinearModel<T>),
    Mlp(MlpModel<T>),
}

impl<T: Real> AnyModel<T> {
    pub fn linear_theta(&self) -> Option<&[T]> {
        match self {
            AnyModel::Linear(m) => Some(&m.theta),
            AnyModel::Mlp(_) => None,
        }
    }
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Linear($m) => $e,
            AnyModel::Mlp($m) => $e,
        }
    };
}

impl<T: Real> Model<T> for AnyModel<T> {
    fn kind(&self) -> String {
        dispatch!(self, m => m.kind())
    }
    fn input_dim(&self) -> usize {
        dispatch!(self, m => m.input_dim())
    }
    fn param_count(&self) -> usize {
        dispatch!(self, m => m.param_count())
    }
    fn params(&self) -> Vec<T> {
        dispatch!(self, m => m.params())
    }
    fn set_params(&mut self, params: &[T]) -> Result<()> {
        dispatch!(self, m => m.set_params(params))
    }
    fn predict(&self, f: &[T]) -> Result<T> {
        dispatch!(self, m => m.predict(f))
    }
    fn accumulate_grad(&self, f: &[T], y: T, scale: T, grad: &mut [T]) -> Result<T> {
        dispatch!(self, m => m.accumulate_grad(f, y, scale, grad))
    }
}

/// Which model a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    Linear,
    Mlp { width: usize },
}

impl ModelChoice {
    pub fn build<T: Real>(self, input_dim: usize, seed: u64) -> Result<AnyModel<T>> {
        Ok(match self {
            ModelChoice::Linear => AnyModel::Linear(LinearModel::zeros(input_dim)),
            ModelChoice::Mlp { width } => AnyModel::Mlp(init_mlp(input_dim, width, seed)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T, M> {
    pub model: M,
    /// SGD steps taken.
    pub t: usize,
    pub schedule: SgdSchedule<T>,
}

impl<T: Real, M: Model<T>> SgdState<T, M> {
    pub fn new(model: M, schedule: SgdSchedule<T>) -> Self {
        SgdState { model, t: 0, schedule }
    }

    /// Step size of the next update (iteration `t + 1`).
    pub fn next_eta(&self) -> T {
        sgd_eta(&self.schedule, self.t + 1)
    }
}

/// Per-iteration metrics. Diagnostics that need the synthetic ground truth
/// are `None` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub t: usize,
    pub eta_t: f64,
    pub eta_oja_t: f64,
    /// Batch-mean loss at the pre-update parameters.
    pub train_loss: f64,
    /// `dist(Q_t, V)`.
    pub dist_qv: Option<f64>,
    /// `|θ_{t+1} − θ*_t|_s`.
    pub rot_err_s: Option<f64>,
    /// `|θ*_t − θ*_{t−1}|_s`.
    pub theta_drift: Option<f64>,
}

impl RunRecord {
    pub const CSV_HEADER: &'static str = "t,eta_t,eta_oja_t,train_loss,dist_qv,rot_err_s,theta_drift";

    pub fn to_csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x:e}")).unwrap_or_default()
        }
        format!(
            "{},{:e},{:e},{:e},{},{},{}",
            self.t,
            self.eta_t,
            self.eta_oja_t,
            self.train_loss,
            opt(self.dist_qv),
            opt(self.rot_err_s),
            opt(self.theta_drift)
        )
    }

    pub fn parse_csv_row(line: &str, line_no: usize) -> Result<Self> {
        let err = |msg: &str| Error::Parse {
            line: line_no,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(err("expected 7 fields"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err("bad number"));
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        Ok(RunRecord {
            t: fields[0].trim().parse().map_err(|_| err("bad iteration"))?,
            eta_t: num(fields[1])?,
            eta_oja_t: num(fields[2])?,
            train_loss: num(fields[3])?,
            dist_qv: opt(fields[4])?,
            rot_err_s: opt(fields[5])?,
            theta_drift: opt(fields[6])?,
        })
    }

    pub fn is_finite(&self) -> bool {
        [self.eta_t, self.eta_oja_t, self.train_loss]
            .into_iter()
            .chain(self.dist_qv)
            .chain(self.rot_err_s)
            .chain(self.theta_drift)
            .all(f64::is_finite)
    }
}

/// Writes records with the fixed header.
pub fn write_records(out: &mut impl std::io::Write, records: &[RunRecord]) -> Result<()> {
    writeln!(out, "{}", RunRecord::CSV_HEADER)?;
    for r in records {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    Ok(())
}

pub fn read_records(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RunRecord::CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing record header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| RunRecord::parse_csv_row(l, i + 1))
        .collect()
}

/// Ground truth available on synthetic streams.
#[derive(Debug, Clone)]
pub struct Truth<T> {
    /// Oracle subspace (`d×k`).
    pub v: Matrix<T>,
    /// `θ*` for the linear task; enables rotated-minimizer diagnostics.
    pub theta_star: Option<Vec<T>>,
    /// Norm order for `rot_err_s` and `theta_drift`.
    pub s: u32,
}

impl<T: Real> Truth<T> {
    /// Diagnostics for a synthetic spec. Rotation-based metrics are only
    /// defined when `k_hat` equals the true rank.
    pub fn from_spec(spec: &FactorModelSpec<T>, k_hat: usize, s: Option<u32>) -> Result<Option<Self>> {
        if k_hat != spec.k {
            return Ok(None);
        }
        let theta_star = match &spec.response {
            ResponseMap::Linear { theta_star } => Some(theta_star.clone()),
            ResponseMap::Additive { .. } => None,
        };
        Ok(Some(Truth {
            v: oracle_subspace(spec)?,
            theta_star,
            s: s.unwrap_or_else(|| s_p(k_hat)),
        }))
    }
}

/// How covariates are turned into model inputs.
#[derive(Debug, Clone)]
pub enum Projection<T> {
    /// Oja-tracked subspace (FSGD, optionally frozen).
    Oja(OjaState<T>),
    /// A projection that never changes (random projection, frozen frame).
    Fixed(Matrix<T>),
    /// Periodic offline PCA on a sliding window.
    Ppca(PpcaState<T>),
    /// Covariates scaled by `d^{-1/2}`.
    Raw,
    /// Ground-truth factors; requires batches carrying `fs`.
    Oracle,
}

impl<T: Real> Projection<T> {
    pub fn frame(&self) -> Option<&Matrix<T>> {
        match self {
            Projection::Oja(s) => Some(&s.q),
            Projection::Fixed(q) => Some(q),
            Projection::Ppca(s) => Some(&s.q),
            Projection::Raw | Projection::Oracle => None,
        }
    }

    /// Model inputs for each sample of `batch`.
    pub fn features(&self, batch: &MiniBatch<T>) -> Result<Vec<Vec<T>>> {
        match self {
            Projection::Raw => {
                let scale = T::one() / T::of_usize(batch.dim()).sqrt();
                Ok(batch.xs.iter().map(|x| x.iter().map(|&v| v * scale).collect()).collect())
            }
            Projection::Oracle => batch
                .fs
                .clone()
                .ok_or_else(|| Error::Unsupported("oracle inputs need ground-truth factors".into())),
            _ => {
                let q = self.frame().expect("frame-based projection");
                batch.xs.iter().map(|x| estimate_factors(q, x)).collect()
            }
        }
    }

    /// Bytes held by the projection (frame plus any sample window).
    pub fn memory_bytes(&self) -> usize {
        let f = std::mem::size_of::<T>();
        match self {
            Projection::Ppca(s) => s.q.as_slice().len() * f + s.window.memory_bytes(),
            _ => self.frame().map_or(0, |q| q.as_slice().len() * f),
        }
    }
}

/// One SGD model plus its projection, advanced one mini-batch at a time.
#[derive(Debug, Clone)]
pub struct Trainer<T, M> {
    pub sgd: SgdState<T, M>,
    pub projection: Projection<T>,
    pub truth: Option<Truth<T>>,
}

impl<T: Real, M: Model<T>> Trainer<T, M> {
    pub fn new(sgd: SgdState<T, M>, projection: Projection<T>, truth: Option<Truth<T>>) -> Self {
        Trainer { sgd, projection, truth }
    }

    /// One joint iteration. Inputs are built with the current (previous)
    /// projection; the same batch then updates the projection. Diagnostics
    /// are evaluated only when `with_diagnostics` is set.
    pub fn step(&mut self, batch: &MiniBatch<T>, with_diagnostics: bool) -> Result<RunRecord> {
        let inputs = self.projection.features(batch)?;
        let (loss, grad) = batch_loss_grad(&self.sgd.model, &inputs, &batch.ys)?;
        let eta = self.sgd.next_eta();
        self.apply_sgd(&grad, eta)?;

        let q_prev = if with_diagnostics { self.projection.frame().cloned() } else { None };
        let eta_oja = self.update_projection(batch)?;

        let mut record = RunRecord {
            t: self.sgd.t,
            eta_t: eta.as_f64(),
            eta_oja_t: eta_oja.as_f64(),
            train_loss: loss.as_f64(),
            dist_qv: None,
            rot_err_s: None,
            theta_drift: None,
        };
        if with_diagnostics {
            self.fill_diagnostics(&mut record, q_prev.as_ref())?;
        }
        Ok(record)
    }

    fn apply_sgd(&mut self, grad: &Gradient<T>, eta: T) -> Result<()> {
        self.sgd.model.step(grad, eta)?;
        self.sgd.t += 1;
        if self.sgd.model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Degenerate("model parameters became non-finite".into()));
        }
        Ok(())
    }

    /// Returns the step size applied to the projection (zero if none).
    fn update_projection(&mut self, batch: &MiniBatch<T>) -> Result<T> {
        match &mut self.projection {
            Projection::Oja(state) => {
                if state.is_frozen() {
                    return Ok(T::zero());
                }
                let eta = state.next_eta();
                *state = oja_step(state, &BatchCovariance::of(batch), eta)?;
                Ok(eta)
            }
            Projection::Ppca(state) => {
                let theta = self.sgd.model.params();
                let linear = self.sgd.model.kind() == "linear";
                if let Some(rotated) = state.observe(batch, linear.then_some(theta.as_slice()))? {
                    self.sgd.model.set_params(&rotated)?;
                }
                Ok(T::zero())
            }
            Projection::Fixed(_) | Projection::Raw | Projection::Oracle => Ok(T::zero()),
        }
    }

    fn fill_diagnostics(&self, record: &mut RunRecord, q_prev: Option<&Matrix<T>>) -> Result<()> {
        let Some(truth) = &self.truth else {
            return Ok(());
        };
        if let (Projection::Oracle, Some(theta_star)) = (&self.projection, &truth.theta_star) {
            if self.sgd.model.kind() == "linear" {
                let err: Vec<T> = self.sgd.model.params().iter().zip(theta_star).map(|(&a, &b)| a - b).collect();
                record.rot_err_s = Some(ls_norm(&err, truth.s)?.as_f64());
                record.theta_drift = Some(0.0);
            }
            return Ok(());
        }
        let Some(q) = self.projection.frame() else {
            return Ok(());
        };
        if q.shape() != truth.v.shape() {
            return Ok(());
        }
        record.dist_qv = Some(subspace_distance(q, &truth.v)?.as_f64());
        let (Some(theta_star), Some(q_prev)) = (&truth.theta_star, q_prev) else {
            return Ok(());
        };
        if self.sgd.model.kind() != "linear" {
            return Ok(());
        }
        // An ill-conditioned rotation leaves the minimizer undefined.
        let (target, prev_target) = match (
            rotated_minimizer_linear(q, &truth.v, theta_star),
            rotated_minimizer_linear(q_prev, &truth.v, theta_star),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(Error::Singular { .. }), _) | (_, Err(Error::Singular { .. })) => return Ok(()),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        let theta = self.sgd.model.params();
        let err: Vec<T> = theta.iter().zip(&target).map(|(&a, &b)| a - b).collect();
        let drift: Vec<T> = target.iter().zip(&prev_target).map(|(&a, &b)| a - b).collect();
        record.rot_err_s = Some(ls_norm(&err, truth.s)?.as_f64());
        record.theta_drift = Some(ls_norm(&drift, truth.s)?.as_f64());
        Ok(())
    }

    /// Condition number of `vᵀq` for the current frame, when defined.
    pub fn rotation_condition(&self) -> Option<f64> {
        let (truth, q) = (self.truth.as_ref()?, self.projection.frame()?);
        if q.shape() != truth.v.shape() {
            return None;
        }
        rotation_condition(q, &truth.v).ok().map(Real::as_f64)
    }

    /// Mean squared error of the current model on `batch` against `targets`.
    pub fn mean_squared_error(&self, batch: &MiniBatch<T>, targets: &[T]) -> Result<T> {
        let inputs = self.projection.features(batch)?;
        crate::models::mean_squared_error(&self.sgd.model, &inputs, targets)
    }

    pub fn memory_bytes(&self) -> usize {
        self.sgd.model.param_count() * std::mem::size_of::<T>() + self.projection.memory_bytes()
    }
}

/// One FSGD iteration (estimate factors with `Q_{t−1}`,
/// SGD step, Oja update with the same batch unless frozen).
pub fn fsgd_step<T: Real, M: Model<T>>(
    sgd: &SgdState<T, M>,
    oja: &OjaState<T>,
    batch: &MiniBatch<T>,
    truth: Option<&Truth<T>>,
) -> Result<(SgdState<T, M>, OjaState<T>, RunRecord)> {
    let mut trainer = Trainer::new(sgd.clone(), Projection::Oja(oja.clone()), truth.cloned());
    let record = trainer.step(batch, true)?;
    let Projection::Oja(oja) = trainer.projection else {
        unreachable!("projection kind is preserved")
    };
    Ok((trainer.sgd, oja, record))
}

/// Data feeding a run.
#[derive(Debug, Clone)]
pub enum DataSource<T> {
    Synthetic(Arc<FactorModelSpec<T>>),
    Csv { path: PathBuf, schema: CsvSchema },
}

#[derive(Debug, Clone)]
pub struct FsgdConfig<T> {
    pub source: DataSource<T>,
    pub k_hat: usize,
    pub m: usize,
    pub t_max: usize,
    pub sgd: SgdSchedule<T>,
    pub oja: OjaSchedule<T>,
    pub freeze_after: Option<usize>,
    pub align: bool,
    pub warmup_steps: usize,
    pub warmup_eta: T,
    pub seed: u64,
    pub model: ModelChoice,
    /// Order of `rot_err_s`; `None` uses `s_p(k_hat)`.
    pub norm_order: Option<u32>,
}

impl<T: Real> FsgdConfig<T> {
    /// Linear synthetic defaults: `m = 5`, `c = 0.5`, warm-up of 10 steps
    /// at 0.01, Oja schedule `0.1/(50 + t)`.
    pub fn linear(spec: FactorModelSpec<T>, t_max: usize, gamma: T, seed: u64) -> Result<Self> {
        let k = spec.k;
        Ok(FsgdConfig {
            source: DataSource::Synthetic(Arc::new(spec)),
            k_hat: k,
            m: 5,
            t_max,
            sgd: SgdSchedule::new(T::lit(0.5), gamma)?,
            oja: OjaSchedule::practical(T::lit(0.1), T::lit(50.0))?,
            freeze_after: None,
            align: false,
            warmup_steps: 10,
            warmup_eta: T::lit(0.01),
            seed,
            model: ModelChoice::Linear,
            norm_order: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_hat == 0 {
            return Err(Error::validation("k_hat", "must be >= 1"));
        }
        if self.m == 0 {
            return Err(Error::validation("m", "must be >= 1"));
        }
        if let Some(t1) = self.freeze_after {
            if t1 > self.t_max {
                return Err(Error::validation("freeze_after", "must not exceed t_max"));
            }
        }
        Ok(())
    }
}

/// Output of a full run.
#[derive(Debug, Clone)]
pub struct FsgdOutput<T> {
    pub records: Vec<RunRecord>,
    pub sgd: SgdState<T, AnyModel<T>>,
    pub oja: OjaState<T>,
    pub rotation_condition: Option<f64>,
    pub memory_bytes: usize,
}

/// Iterations at which records are kept: all of them up to
/// [`RecordThinning::FULL_LIMIT`], otherwise about
/// [`RecordThinning::LOG_POINTS`] log-spaced iterations plus the last.
#[derive(Debug, Clone)]
pub struct RecordThinning {
    keep: Option<Vec<usize>>,
    cursor: usize,
}

impl RecordThinning {
    pub const FULL_LIMIT: usize = 10_000;
    pub const LOG_POINTS: usize = 2_000;

    pub fn new(t_max: usize) -> Self {
        if t_max <= Self::FULL_LIMIT {
            return RecordThinning { keep: None, cursor: 0 };
        }
        let top = (t_max as f64).ln();
        let mut keep: Vec<usize> = (0..Self::LOG_POINTS)
            .map(|i| (top * i as f64 / (Self::LOG_POINTS - 1) as f64).exp().round() as usize)
            .map(|t| t.clamp(1, t_max))
            .collect();
        keep.push(t_max);
        keep.dedup();
        RecordThinning {
            keep: Some(keep),
            cursor: 0,
        }
    }

    /// Whether iteration `t` (visited in increasing order) is kept.
    pub fn keep(&mut self, t: usize) -> bool {
        let Some(keep) = &self.keep else {
            return true;
        };
        while self.cursor < keep.len() && keep[self.cursor] < t {
            self.cursor += 1;
        }
        self.cursor < keep.len() && keep[self.cursor] == t
    }
}

/// Builds the batch source of a config.
pub fn open_source<T: Real>(source: &DataSource<T>, m: usize) -> Result<Box<dyn BatchSource<T>>> {
    Ok(match source {
        DataSource::Synthetic(spec) => Box::new(SyntheticStream::new(spec.clone(), m)),
        DataSource::Csv { path, schema } => Box::new(stream_csv::<T>(path, m, *schema)?),
    })
}

/// Stage-I warm-up followed by `t_max` joint iterations. Stops early if a
/// CSV stream runs out.
pub fn run_fsgd<T: Real>(config: &FsgdConfig<T>) -> Result<FsgdOutput<T>> {
    config.validate()?;
    let mut source = open_source(&config.source, config.m)?;
    let q0 = warmup(source.as_mut(), config.warmup_steps, config.warmup_eta, config.k_hat, config.seed)?;
    let oja = OjaState::new(q0, config.oja)?
        .with_freeze(config.freeze_after)
        .with_align(config.align);
    let truth = match &config.source {
        DataSource::Synthetic(spec) => Truth::from_spec(spec, config.k_hat, config.norm_order)?,
        DataSource::Csv { .. } => None,
    };
    let model = config.model.build(config.k_hat, config.seed)?;
    let trainer = Trainer::new(SgdState::new(model, config.sgd), Projection::Oja(oja), truth);
    let (trainer, records) = drive(trainer, source.as_mut(), config.t_max)?;
    let rotation_condition = trainer.rotation_condition();
    let memory_bytes = trainer.memory_bytes();
    let Projection::Oja(oja) = trainer.projection else {
        unreachable!("projection kind is preserved")
    };
    Ok(FsgdOutput {
        records,
        sgd: trainer.sgd,
        oja,
        rotation_condition,
        memory_bytes,
    })
}

/// Runs up to `t_max` iterations of `trainer` on `source`, keeping thinned
/// records.
pub fn drive<T: Real, M: Model<T>>(
    mut trainer: Trainer<T, M>,
    source: &mut dyn BatchSource<T>,
    t_max: usize,
) -> Result<(Trainer<T, M>, Vec<RunRecord>)> {
    let mut thinning = RecordThinning::new(t_max);
    let mut records = Vec::new();
    for t in 1..=t_max {
        let Some(batch) = source.next_batch().map_err(|e| e.at_step(t))? else {
            break;
        };
        let keep = thinning.keep(t);
        let record = trainer.step(&batch, keep).map_err(|e| e.at_step(t))?;
        if keep {
            records.push(record);
        }
    }
    Ok((trainer, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oja::random_start;
    use crate::streamgen::{sample_batch, Dist};

    #[test]
    fn sgd_schedule_examples() {
        let s = SgdSchedule::new(0.5f64, 0.6).unwrap();
        assert_eq!(sgd_eta(&s, 1), 0.5);
        let s = SgdSchedule::new(0.5f64, 0.5).unwrap();
        assert!((sgd_eta(&s, 4) - 0.25).abs() < 1e-16);
        for g in [0.1, 0.5, 0.9] {
            let s = SgdSchedule::new(1.7, g).unwrap();
            assert_eq!(sgd_eta(&s, 1), 1.7);
            for t in 1..500 {
                assert!(sgd_eta(&s, t + 1) <= sgd_eta(&s, t));
            }
        }
        let shifted = SgdSchedule::with_offset(0.5f64, 0.5, 2.0).unwrap();
        assert!((sgd_eta(&shifted, 3) - 0.25).abs() < 1e-16);
        assert!(SgdSchedule::new(0.5, 1.5).is_err());
        assert!(SgdSchedule::new(0.5, 0.0).is_err());
    }

    #[test]
    fn factor_estimate_examples() {
        let q = random_start::<f64>(12, 3, 1).unwrap();
        assert_eq!(estimate_factors(&q, &[0.0; 12]).unwrap(), vec![0.0; 3]);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let f = estimate_factors(&q, &x).unwrap();
        let fn2: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        let xn2: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(fn2 <= xn2 / 12f64.sqrt() + 1e-15);
        assert!(estimate_factors(&q, &[1.0; 5]).is_err());
    }

    #[test]
    fn factor_estimate_is_a_rotation_without_idiosyncratic_noise() {
        let spec = FactorModelSpec::<f64>::linear_synthetic(20, 3, 5)
            .unwrap()
            .with_idio(Dist::Zero);
        let (s, c) = 0.4f64.sin_cos();
        let r0 = Matrix::from_rows(&[[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, -1.0]]);
        let q = oracle_subspace(&spec).unwrap().matmul(&r0).unwrap();
        let b = sample_batch(&spec, 4, 0).unwrap();
        for (x, f) in b.xs.iter().zip(b.fs.as_ref().unwrap()) {
            let fh = estimate_factors(&q, x).unwrap();
            let n1: f64 = fh.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n2: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n1 - n2).abs() < 1e-10);
        }
    }

    #[test]
    fn rotated_minimizer_examples() {
        let v = random_start::<f64>(8, 2, 3).unwrap();
        let th = vec![0.3, -1.2];
        let same = rotated_minimizer_linear(&v, &v, &th).unwrap();
        assert!((same[0] - 0.3).abs() < 1e-14 && (same[1] + 1.2).abs() < 1e-14);

        let v1 = random_start::<f64>(8, 1, 3).unwrap();
        let neg = v1.scale(-1.0);
        let flipped = rotated_minimizer_linear(&neg, &v1, &[0.8]).unwrap();
        assert!((flipped[0] + 0.8).abs() < 1e-14);
    }

    #[test]
    fn hand_computed_step() {
        // k = 1, θ = 0, f̂ = 1, y = 2, η = 0.5 → θ' = 2.
        let q = Matrix::column_vector(&[1.0]);
        let batch = MiniBatch::new(vec![vec![1.0]], None, vec![2.0]).unwrap();
        let sgd = SgdState::new(LinearModel::zeros(1), SgdSchedule::new(0.5, 0.6).unwrap());
        let oja = OjaState::new(q, OjaSchedule::practical(0.1, 50.0).unwrap())
            .unwrap()
            .with_freeze(Some(0));
        let (sgd2, oja2, rec) = fsgd_step(&sgd, &oja, &batch, None).unwrap();
        assert!((sgd2.model.theta[0] - 2.0f64).abs() < 1e-15);
        assert_eq!(rec.train_loss, 4.0);
        assert_eq!(rec.eta_t, 0.5);
        assert_eq!(rec.eta_oja_t, 0.0);
        assert_eq!(oja2, oja);
    }

    #[test]
    fn record_row_roundtrip() {
        let r = RunRecord {
            t: 12,
            eta_t: 0.25,
            eta_oja_t: 1.5e-3,
            train_loss: 0.125,
            dist_qv: Some(0.5),
            rot_err_s: None,
            theta_drift: Some(3e-9),
        };
        let row = r.to_csv_row();
        assert_eq!(RunRecord::parse_csv_row(&row, 2).unwrap(), r);
        let mut buf = Vec::new();
        write_records(&mut buf, &[r.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,eta_t,eta_oja_t,train_loss,dist_qv,rot_err_s,theta_drift\n12,"));
        assert_eq!(read_records(&text).unwrap(), vec![r]);
    }

    #[test]
    fn thinning_keeps_everything_below_limit_and_the_last_row_above() {
        let mut all = RecordThinning::new(100);
        assert!((1..=100).all(|t| all.keep(t)));
        let mut thin = RecordThinning::new(100_000);
        let kept: Vec<usize> = (1..=100_000).filter(|&t| thin.keep(t)).collect();
        assert!(kept.len() <= RecordThinning::LOG_POINTS + 1);
        assert!(kept.len() > 1_000);
        assert_eq!(kept[0], 1);
        assert_eq!(*kept.last().unwrap(), 100_000);
    }

    #[test]
    fn empty_run_returns_warm_start() {
        let spec = FactorModelSpec::<f64>::linear_synthetic(10, 3, 0).unwrap();
        let cfg = FsgdConfig::linear(spec, 0, 0.6, 1).unwrap();
        let out = run_fsgd(&cfg).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.sgd.t, 0);
        assert_eq!(out.oja.t, 0);
        assert_eq!(out.sgd.model.linear_theta().unwrap(), &[0.0; 3]);
    }

    #[test]
    fn config_validation() {
        let spec = FactorModelSpec::<f64>::linear_synthetic(10, 3, 0).unwrap();
        let mut cfg = FsgdConfig::linear(spec, 10, 0.6, 1).unwrap();
        cfg.freeze_after = Some(11);
        assert!(matches!(run_fsgd(&cfg), Err(Error::Validation { .. })));
    }
}
