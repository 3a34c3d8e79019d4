//! Experiment plans and their execution: grid × repetitions fanned out over
//! a worker pool, one record file per run, a summary table per plan.

use std::fmt;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::baselines::{forecast_run, oracle_run, ppca_run, randomproj_run, vanilla_run, Forecaster, PpcaConfig};
use crate::error::{Error, Result};
use crate::fsgd::{run_fsgd, write_records, DataSource, FsgdConfig, ModelChoice, Projection, RunRecord, SgdSchedule, Trainer};
use crate::oja::OjaSchedule;
use crate::streamgen::{sample_batch, CsvSchema, FactorModelSpec, MiniBatch, SyntheticStream};

use super::nn::{run_nn, EpochPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Fsgd,
    /// FSGD with the projection frozen after `freeze_after` (or a fraction
    /// of the run).
    FsgdFrozen,
    Oracle,
    Vanilla,
    RandomProj,
    Ppca,
    Persistence,
    PrevailingMean,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Fsgd,
        Method::FsgdFrozen,
        Method::Oracle,
        Method::Vanilla,
        Method::RandomProj,
        Method::Ppca,
        Method::Persistence,
        Method::PrevailingMean,
    ];
    /// Tags kept for methods that are not implemented.
    pub const RESERVED: [&'static str; 2] = ["pca_a_nn", "nn_joint"];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Fsgd => "fsgd",
            Method::FsgdFrozen => "fsgd_frozen",
            Method::Oracle => "oracle",
            Method::Vanilla => "vanilla",
            Method::RandomProj => "randomproj",
            Method::Ppca => "ppca",
            Method::Persistence => "persistence",
            Method::PrevailingMean => "prevailing_mean",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(m) = Method::ALL.into_iter().find(|m| m.tag() == s) {
            return Ok(m);
        }
        if Method::RESERVED.contains(&s) {
            return Err(Error::Unsupported(format!("method `{s}` is reserved but not implemented")));
        }
        Err(Error::UnknownTag(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    LinearSynth,
    NnSynth,
    CsvStream { path: PathBuf, truth_k: usize },
}

impl Task {
    pub fn tag(&self) -> &'static str {
        match self {
            Task::LinearSynth => "linear_synth",
            Task::NnSynth => "nn_synth",
            Task::CsvStream { .. } => "csv_stream",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OjaChoice {
    Practical { c: f64, c0: f64 },
    /// `rho_k = None` takes the population eigengap of the synthetic spec.
    Theoretical { alpha: f64, beta: f64, rho_k: Option<f64> },
}

/// Settings of streaming (linear and CSV) runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    /// True factor count of synthetic data.
    pub k: usize,
    pub m: usize,
    pub t_max: usize,
    pub c: f64,
    pub t_offset: f64,
    pub oja: OjaChoice,
    pub warmup_steps: usize,
    pub warmup_eta: f64,
    pub freeze_after: Option<usize>,
    /// Freeze point as a fraction of the run when `freeze_after` is unset.
    pub freeze_fraction: f64,
    pub align: bool,
    pub norm_order: Option<u32>,
    /// Held-out samples for the final test loss.
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpcaSettings {
    pub refresh_every: Option<usize>,
    pub window: usize,
    pub rotate_coeffs: bool,
    pub align: bool,
}

/// Settings of the pooled-sample neural-network task.
#[derive(Debug, Clone, PartialEq)]
pub struct NnSettings {
    pub width: usize,
    pub epochs: usize,
    pub n_train: usize,
    pub n_warmup: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub m: usize,
    pub c: f64,
    pub gamma: f64,
    pub warmup_steps: usize,
    pub warmup_eta: f64,
    pub oja_c: f64,
    pub oja_c0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub d: Vec<usize>,
    pub gamma: Vec<f64>,
    pub k_hat: Vec<usize>,
    pub method: Vec<Method>,
}

/// One cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub method: Method,
    pub d: usize,
    pub gamma: f64,
    pub k_hat: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub name: String,
    pub task: Task,
    pub grid: Grid,
    pub reps: usize,
    /// Repetition `r` uses seed `seed + r` at every grid point.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub run: RunSettings,
    pub ppca: PpcaSettings,
    pub nn: NnSettings,
}

impl ExperimentPlan {
    /// Grid points in a fixed order: method, then d, γ, k̂.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &method in &self.grid.method {
            for &d in &self.grid.d {
                for &gamma in &self.grid.gamma {
                    for &k_hat in &self.grid.k_hat {
                        out.push(GridPoint { method, d, gamma, k_hat });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::validation(key, msg));
        if self.reps == 0 {
            return bad("reps", "must be >= 1");
        }
        if self.grid.d.is_empty() || self.grid.gamma.is_empty() || self.grid.k_hat.is_empty() || self.grid.method.is_empty() {
            return bad("grid", "every grid list must be non-empty");
        }
        if self.grid.gamma.iter().any(|&g| !(g > 0.0 && g < 1.0)) {
            return bad("grid.gamma", "gamma must lie in (0,1)");
        }
        if !(self.nn.gamma > 0.0 && self.nn.gamma < 1.0) {
            return bad("nn.gamma", "gamma must lie in (0,1)");
        }
        if self.grid.k_hat.contains(&0) {
            return bad("grid.k_hat", "must be >= 1");
        }
        if self.run.m == 0 || self.nn.m == 0 {
            return bad("m", "must be >= 1");
        }
        if self.run.t_max == 0 {
            return bad("run.t_max", "must be >= 1");
        }
        if !(self.run.c > 0.0) || !(self.nn.c > 0.0) {
            return bad("c", "must be positive");
        }
        if !(self.run.freeze_fraction > 0.0 && self.run.freeze_fraction <= 1.0) {
            return bad("run.freeze_fraction", "must lie in (0,1]");
        }
        if self.run.freeze_after.is_some_and(|t1| t1 > self.run.t_max) {
            return bad("run.freeze_after", "must not exceed t_max");
        }
        if self.ppca.window == 0 || self.ppca.refresh_every == Some(0) {
            return bad("ppca", "window and refresh_every must be >= 1");
        }
        match &self.task {
            Task::LinearSynth | Task::NnSynth => {
                let k = self.run.k;
                if k == 0 {
                    return bad("run.k", "must be >= 1");
                }
                for &d in &self.grid.d {
                    if self.grid.k_hat.iter().any(|&kh| kh > d) || k > d {
                        return bad("grid.d", "every d must be at least k and k_hat");
                    }
                }
            }
            Task::CsvStream { truth_k, .. } => {
                if self.grid.method.contains(&Method::Oracle) && *truth_k == 0 {
                    return bad("method", "oracle on a CSV stream needs truth columns");
                }
            }
        }
        if self.task != Task::NnSynth {
            for p in self.points() {
                if !matches!(p.method, Method::Persistence | Method::PrevailingMean) {
                    self.stream_config(&p, self.seed, None)?;
                }
            }
        }
        Ok(())
    }

    /// Freeze iteration of frozen runs.
    pub fn freeze_point(&self, total: usize) -> usize {
        self.run
            .freeze_after
            .unwrap_or_else(|| (self.run.freeze_fraction * total as f64).round() as usize)
            .min(total)
    }

    /// Resolves a streaming grid point. `spec` is required for synthetic
    /// tasks.
    pub fn stream_config(&self, p: &GridPoint, seed: u64, spec: Option<Arc<FactorModelSpec<f64>>>) -> Result<FsgdConfig<f64>> {
        let r = &self.run;
        let source = match (&self.task, spec) {
            (Task::CsvStream { path, truth_k }, _) => DataSource::Csv {
                path: path.clone(),
                schema: CsvSchema {
                    d: None,
                    truth_k: *truth_k,
                },
            },
            (_, Some(spec)) => DataSource::Synthetic(spec),
            (_, None) => DataSource::Synthetic(Arc::new(FactorModelSpec::linear_synthetic(p.d, r.k, seed)?)),
        };
        let oja = match r.oja {
            OjaChoice::Practical { c, c0 } => OjaSchedule::practical(c, c0)?,
            OjaChoice::Theoretical { alpha, beta, rho_k } => {
                let rho = match (rho_k, &source) {
                    (Some(v), _) => v,
                    (None, DataSource::Synthetic(spec)) => spec
                        .population_gap()
                        .ok_or_else(|| Error::validation("run.oja_rho", "no population eigengap for this spec; set it"))?,
                    (None, DataSource::Csv { .. }) => {
                        return Err(Error::validation("run.oja_rho", "required for the theoretical schedule on CSV data"))
                    }
                };
                OjaSchedule::theoretical(alpha, beta, rho)?
            }
        };
        let cfg = FsgdConfig {
            source,
            k_hat: p.k_hat,
            m: r.m,
            t_max: r.t_max,
            sgd: SgdSchedule::with_offset(r.c, p.gamma, r.t_offset).map_err(|e| match e {
                Error::Validation { key, msg } if key == "gamma" => Error::validation("grid.gamma", msg),
                other => other,
            })?,
            oja,
            freeze_after: (p.method == Method::FsgdFrozen).then(|| self.freeze_point(r.t_max)),
            align: r.align,
            warmup_steps: r.warmup_steps,
            warmup_eta: r.warmup_eta,
            seed,
            model: ModelChoice::Linear,
            norm_order: r.norm_order,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ppca_config(&self, k_hat: usize) -> Result<PpcaConfig> {
        let mut cfg = PpcaConfig::new(k_hat, self.ppca.refresh_every, self.ppca.window)?;
        cfg.rotate_coeffs = self.ppca.rotate_coeffs;
        cfg.align = self.ppca.align;
        Ok(cfg)
    }

    /// Stable text identifying everything except the grid and repetitions.
    pub fn fingerprint(&self) -> String {
        format!("{}|{:?}|{:?}|{:?}|{:?}", self.name, self.task, self.run, self.ppca, self.nn)
    }
}

/// Result of one run before it is written out.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub final_error: Option<f64>,
    pub final_dist: Option<f64>,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub valid_loss: Option<f64>,
    pub memory_bytes: usize,
    pub steps: usize,
    pub curve: Option<Vec<EpochPoint>>,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub plan: String,
    pub task: String,
    pub method: String,
    pub d: usize,
    pub gamma: f64,
    pub k_hat: usize,
    pub rep: usize,
    pub seed: u64,
    pub final_error: Option<f64>,
    pub final_dist: Option<f64>,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub valid_loss: Option<f64>,
    pub memory_bytes: usize,
    pub steps: usize,
    /// `ok`, or `error: ...`.
    pub status: String,
    pub record_file: String,
    pub wall_ms: u64,
    /// Loaded from a previous invocation instead of executed.
    pub resumed: bool,
}

pub const SUMMARY_HEADER: &str = "plan,task,method,d,gamma,k_hat,rep,seed,final_error,final_dist,train_loss,test_loss,valid_loss,memory_bytes,steps,status,record_file,wall_ms";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn clean(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

impl RunSummary {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            clean(&self.plan),
            self.task,
            self.method,
            self.d,
            self.gamma,
            self.k_hat,
            self.rep,
            self.seed,
            opt_cell(self.final_error),
            opt_cell(self.final_dist),
            opt_cell(self.train_loss),
            opt_cell(self.test_loss),
            opt_cell(self.valid_loss),
            self.memory_bytes,
            self.steps,
            clean(&self.status),
            self.record_file,
            self.wall_ms
        )
    }

    pub fn parse_csv_row(line: &str, line_no: usize) -> Result<Self> {
        let err = |msg: &str| Error::Parse {
            line: line_no,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 18 {
            return Err(err("expected 18 summary fields"));
        }
        fn num<V: FromStr>(s: &str, e: impl Fn(&str) -> Error) -> Result<V> {
            s.trim().parse().map_err(|_| e("bad number"))
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                num(s, err).map(Some)
            }
        };
        Ok(RunSummary {
            plan: f[0].to_string(),
            task: f[1].to_string(),
            method: f[2].to_string(),
            d: num(f[3], err)?,
            gamma: num(f[4], err)?,
            k_hat: num(f[5], err)?,
            rep: num(f[6], err)?,
            seed: num(f[7], err)?,
            final_error: opt(f[8])?,
            final_dist: opt(f[9])?,
            train_loss: opt(f[10])?,
            test_loss: opt(f[11])?,
            valid_loss: opt(f[12])?,
            memory_bytes: num(f[13], err)?,
            steps: num(f[14], err)?,
            status: f[15].to_string(),
            record_file: f[16].to_string(),
            wall_ms: num(f[17], err)?,
            resumed: false,
        })
    }
}

pub fn write_summary(path: &Path, rows: &[RunSummary]) -> Result<()> {
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_csv_row());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_summary(path: &Path) -> Result<Vec<RunSummary>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SUMMARY_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing summary header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| RunSummary::parse_csv_row(l, i + 1))
        .collect()
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Execution options that do not affect results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    pub resume: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: default_workers(),
            resume: false,
        }
    }
}

/// `FSGD_WORKERS` if set, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var("FSGD_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone)]
struct Job {
    point: GridPoint,
    rep: usize,
    seed: u64,
    hash: String,
}

fn job_hash(plan: &ExperimentPlan, p: &GridPoint, seed: u64) -> String {
    let key = format!("{}|{}|{}|{:?}|{}|{}", plan.fingerprint(), p.method, p.d, p.gamma, p.k_hat, seed);
    let digest = Sha256::digest(key.as_bytes());
    hex::encode(&digest[..8])
}

fn jobs(plan: &ExperimentPlan) -> Vec<Job> {
    let mut out = Vec::new();
    for point in plan.points() {
        for rep in 0..plan.reps {
            let seed = plan.seed.wrapping_add(rep as u64);
            out.push(Job {
                point,
                rep,
                seed,
                hash: job_hash(plan, &point, seed),
            });
        }
    }
    out
}

/// Runs every grid point × repetition and writes per-run records,
/// `summary.csv` and `meta.json` into the plan's output directory.
///
/// Failures (errors or panics) are recorded in the summary row and do not
/// stop the plan. With `resume`, runs whose completion marker exists are
/// loaded instead of executed.
pub fn run_plan(plan: &ExperimentPlan, options: RunOptions) -> Result<Vec<RunSummary>> {
    plan.validate()?;
    fs::create_dir_all(&plan.out_dir)?;
    let jobs = jobs(plan);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::Unsupported(format!("cannot start worker pool: {e}")))?;
    let summaries: Vec<RunSummary> = pool.install(|| {
        jobs.par_iter()
            .map(|job| execute_job(plan, job, options.resume))
            .collect()
    });
    write_summary(&plan.out_dir.join("summary.csv"), &summaries)?;
    write_meta(plan, options, &summaries)?;
    Ok(summaries)
}

fn marker_path(plan: &ExperimentPlan, hash: &str) -> PathBuf {
    plan.out_dir.join(format!("run_{hash}.done"))
}

fn execute_job(plan: &ExperimentPlan, job: &Job, resume: bool) -> RunSummary {
    let record_file = format!("records_{}.csv", job.hash);
    let marker = marker_path(plan, &job.hash);
    if resume {
        if let Some(mut s) = fs::read_to_string(&marker)
            .ok()
            .and_then(|t| RunSummary::parse_csv_row(t.trim(), 1).ok())
        {
            s.resumed = true;
            return s;
        }
    }
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| execute_point(plan, &job.point, job.seed)));
    let mut summary = RunSummary {
        plan: plan.name.clone(),
        task: plan.task.tag().to_string(),
        method: job.point.method.to_string(),
        d: job.point.d,
        gamma: job.point.gamma,
        k_hat: job.point.k_hat,
        rep: job.rep,
        seed: job.seed,
        final_error: None,
        final_dist: None,
        train_loss: None,
        test_loss: None,
        valid_loss: None,
        memory_bytes: 0,
        steps: 0,
        status: "ok".into(),
        record_file: record_file.clone(),
        wall_ms: 0,
        resumed: false,
    };
    let result = match outcome {
        Ok(r) => r,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            Err(Error::Degenerate(format!("panic: {msg}")))
        }
    };
    let persisted = result.and_then(|out| {
        persist_outcome(plan, &record_file, &job.hash, &out)?;
        Ok(out)
    });
    match persisted {
        Ok(out) => {
            summary.final_error = out.final_error;
            summary.final_dist = out.final_dist;
            summary.train_loss = out.train_loss;
            summary.test_loss = out.test_loss;
            summary.valid_loss = out.valid_loss;
            summary.memory_bytes = out.memory_bytes;
            summary.steps = out.steps;
        }
        Err(e) => summary.status = format!("error: {e}"),
    }
    summary.wall_ms = start.elapsed().as_millis() as u64;
    if summary.is_ok() {
        // A failed marker write only costs a re-run on resume.
        let _ = write_atomic(&marker, format!("{}\n", summary.to_csv_row()).as_bytes());
    }
    summary
}

fn persist_outcome(plan: &ExperimentPlan, record_file: &str, hash: &str, out: &RunOutcome) -> Result<()> {
    let mut buf = Vec::new();
    write_records(&mut buf, &out.records)?;
    write_atomic(&plan.out_dir.join(record_file), &buf)?;
    if let Some(curve) = &out.curve {
        let mut text = String::from("epoch,train_loss,valid_loss\n");
        for p in curve {
            text.push_str(&format!("{},{:e},{:e}\n", p.epoch, p.train_loss, p.valid_loss));
        }
        write_atomic(&plan.out_dir.join(format!("curve_{hash}.csv")), text.as_bytes())?;
    }
    Ok(())
}

/// Executes one grid point for one seed without touching the file system.
pub fn execute_point(plan: &ExperimentPlan, p: &GridPoint, seed: u64) -> Result<RunOutcome> {
    match plan.task {
        Task::NnSynth => run_nn(plan, p, seed),
        Task::LinearSynth | Task::CsvStream { .. } => run_stream(plan, p, seed),
    }
}

fn tail_mean(records: &[RunRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let n = (records.len() / 10).max(1);
    let tail = &records[records.len() - n..];
    Some(tail.iter().map(|r| r.train_loss).sum::<f64>() / n as f64)
}

fn test_batch(spec: &FactorModelSpec<f64>, n: usize) -> Result<Option<(MiniBatch<f64>, Vec<f64>)>> {
    if n == 0 {
        return Ok(None);
    }
    // Far from any training position.
    let batch = sample_batch(spec, n, u64::MAX - 1)?;
    let targets = batch
        .fs
        .as_ref()
        .expect("synthetic batches carry factors")
        .iter()
        .map(|f| spec.mean_response(f))
        .collect();
    Ok(Some((batch, targets)))
}

fn run_stream(plan: &ExperimentPlan, p: &GridPoint, seed: u64) -> Result<RunOutcome> {
    let spec = match plan.task {
        Task::LinearSynth => Some(Arc::new(FactorModelSpec::linear_synthetic(p.d, plan.run.k, seed)?)),
        _ => None,
    };
    let cfg = plan.stream_config(p, seed, spec.clone())?;
    let test = match &spec {
        Some(s) => test_batch(s, plan.run.n_test)?,
        None => None,
    };

    if let Some(kind) = match p.method {
        Method::Persistence => Some(Forecaster::Persistence),
        Method::PrevailingMean => Some(Forecaster::PrevailingMean),
        _ => None,
    } {
        let records = match &spec {
            Some(s) => forecast_run(kind, &mut SyntheticStream::new(s.clone(), cfg.m), cfg.t_max)?,
            None => {
                let mut src = crate::fsgd::open_source(&cfg.source, cfg.m)?;
                forecast_run(kind, src.as_mut(), cfg.t_max)?
            }
        };
        return Ok(RunOutcome {
            train_loss: tail_mean(&records),
            steps: records.last().map_or(0, |r| r.t),
            memory_bytes: std::mem::size_of::<f64>() * 2,
            records,
            ..RunOutcome::default()
        });
    }

    let (records, trainer) = match p.method {
        Method::Fsgd | Method::FsgdFrozen => {
            let out = run_fsgd(&cfg)?;
            let truth = match &cfg.source {
                DataSource::Synthetic(s) => crate::fsgd::Truth::from_spec(s, cfg.k_hat, cfg.norm_order)?,
                DataSource::Csv { .. } => None,
            };
            let trainer = Trainer::new(out.sgd, Projection::Oja(out.oja), truth);
            (out.records, trainer)
        }
        Method::Oracle => {
            let o = oracle_run(&cfg)?;
            (o.records, o.trainer)
        }
        Method::Vanilla => {
            let o = vanilla_run(&cfg)?;
            (o.records, o.trainer)
        }
        Method::RandomProj => {
            let o = randomproj_run(&cfg)?;
            (o.records, o.trainer)
        }
        Method::Ppca => {
            let o = ppca_run(&cfg, &plan.ppca_config(p.k_hat)?)?;
            (o.records, o.trainer)
        }
        Method::Persistence | Method::PrevailingMean => unreachable!("handled above"),
    };
    let last = records.last();
    let test_loss = match &test {
        Some((batch, targets)) => Some(trainer.mean_squared_error(batch, targets)?),
        None => None,
    };
    Ok(RunOutcome {
        final_error: last.and_then(|r| r.rot_err_s),
        final_dist: last.and_then(|r| r.dist_qv),
        train_loss: tail_mean(&records),
        test_loss,
        valid_loss: None,
        memory_bytes: trainer.memory_bytes(),
        steps: trainer.sgd.t,
        curve: None,
        records,
    })
}

fn write_meta(plan: &ExperimentPlan, options: RunOptions, rows: &[RunSummary]) -> Result<()> {
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    let meta = serde_json::json!({
        "plan": plan.name,
        "task": plan.task.tag(),
        "methods": plan.grid.method.iter().map(|m| m.tag()).collect::<Vec<_>>(),
        "grid": {
            "d": plan.grid.d,
            "gamma": plan.grid.gamma,
            "k_hat": plan.grid.k_hat,
        },
        "reps": plan.reps,
        "seed_base": plan.seed,
        "seed_rule": "seed_base + rep",
        "settings": plan.fingerprint(),
        "sgd_decay": "per mini-batch step (global counter)",
        "oja_schedule": format!("{:?}", plan.run.oja),
        "record_hash": "sha256 of plan settings, grid point and seed; first 16 hex digits",
        "memory_model": "parameters + projection + window, bytes",
        "workers": options.workers,
        "runs": rows.len(),
        "failed": failed,
        "resumed": rows.iter().filter(|r| r.resumed).count(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Unsupported(e.to_string()))?;
    write_atomic(&plan.out_dir.join("meta.json"), format!("{text}\n").as_bytes())
}
