//! Aggregation of `summary.csv` into per-grid-point statistics and log-log
//! slope diagnostics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::plan::{read_summary, write_atomic, RunSummary};

/// Least-squares fit of `ln y = slope·ln x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_loglog_slope(series: &[(f64, f64)]) -> Result<SlopeFit> {
    if series.len() < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 points, got {}", series.len())));
    }
    if series.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::Degenerate("log-log fit needs positive finite values".into()));
    }
    let pts: Vec<(f64, f64)> = series.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= f64::EPSILON * n * mx.abs().max(1.0) {
        return Err(Error::Degenerate("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Median with the midpoint convention for even counts. `None` if empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, sd))
}

/// Statistics of one metric at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let (mean, sd) = mean_sd(values)?;
        Some(Stat {
            n: values.len(),
            median: median(values)?,
            mean,
            sd,
        })
    }
}

/// One row of `aggregate.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub task: String,
    pub d: usize,
    pub gamma: f64,
    pub k_hat: usize,
    pub runs: usize,
    pub failed: usize,
    pub error: Option<Stat>,
    pub test: Option<Stat>,
    pub dist: Option<Stat>,
}

pub const AGGREGATE_HEADER: &str = "method,task,d,gamma,k_hat,runs,failed,error_median,error_mean,error_sd,test_median,test_mean,test_sd,dist_median";
pub const SLOPES_HEADER: &str = "method,task,over,gamma,k_hat,d,points,slope,intercept,r2";

impl AggregateRow {
    pub fn to_csv_row(&self) -> String {
        let cell = |s: Option<Stat>, f: fn(Stat) -> f64| s.map(|s| format!("{:e}", f(s))).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.task,
            self.d,
            self.gamma,
            self.k_hat,
            self.runs,
            self.failed,
            cell(self.error, |s| s.median),
            cell(self.error, |s| s.mean),
            cell(self.error, |s| s.sd),
            cell(self.test, |s| s.median),
            cell(self.test, |s| s.mean),
            cell(self.test, |s| s.sd),
            cell(self.dist, |s| s.median),
        )
    }
}

/// Slope of the median error across `d` (at fixed γ, k̂) or across γ (at
/// fixed d, k̂).
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeRow {
    pub method: String,
    pub task: String,
    /// `d` or `gamma`.
    pub over: &'static str,
    pub gamma: Option<f64>,
    pub k_hat: usize,
    pub d: Option<usize>,
    pub points: usize,
    pub fit: SlopeFit,
}

impl SlopeRow {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:e},{:e},{:e}",
            self.method,
            self.task,
            self.over,
            self.gamma.map(|g| g.to_string()).unwrap_or_default(),
            self.k_hat,
            self.d.map(|d| d.to_string()).unwrap_or_default(),
            self.points,
            self.fit.slope,
            self.fit.intercept,
            self.fit.r2
        )
    }
}

/// Groups summary rows by grid point in first-seen order.
pub fn aggregate(rows: &[RunSummary]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String, usize, u64, usize)> = Vec::new();
    let mut groups: BTreeMap<(String, String, usize, u64, usize), Vec<&RunSummary>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.task.clone(), r.d, r.gamma.to_bits(), r.k_hat);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let ok: Vec<&&RunSummary> = members.iter().filter(|r| r.is_ok()).collect();
            let collect = |f: fn(&RunSummary) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            AggregateRow {
                method: key.0.clone(),
                task: key.1.clone(),
                d: key.2,
                gamma: f64::from_bits(key.3),
                k_hat: key.4,
                runs: members.len(),
                failed: members.len() - ok.len(),
                error: Stat::of(&collect(|r| r.final_error)),
                test: Stat::of(&collect(|r| r.test_loss)),
                dist: Stat::of(&collect(|r| r.final_dist)),
            }
        })
        .collect()
}

/// Log-log slopes of median error (or median test loss when no error is
/// recorded) against `d` and against `γ`, wherever ≥ 3 distinct values
/// exist.
pub fn slopes(rows: &[AggregateRow]) -> Vec<SlopeRow> {
    let metric = |r: &AggregateRow| r.error.or(r.test).map(|s| s.median);
    let mut out = Vec::new();
    let mut by_d: BTreeMap<(String, String, u64, usize), Vec<(f64, f64)>> = BTreeMap::new();
    let mut by_gamma: BTreeMap<(String, String, usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let Some(y) = metric(r) else { continue };
        by_d.entry((r.method.clone(), r.task.clone(), r.gamma.to_bits(), r.k_hat))
            .or_default()
            .push((r.d as f64, y));
        by_gamma
            .entry((r.method.clone(), r.task.clone(), r.d, r.k_hat))
            .or_default()
            .push((r.gamma, y));
    }
    for ((method, task, g, k_hat), pts) in by_d {
        if let Ok(fit) = fit_loglog_slope(&pts) {
            out.push(SlopeRow {
                method,
                task,
                over: "d",
                gamma: Some(f64::from_bits(g)),
                k_hat,
                d: None,
                points: pts.len(),
                fit,
            });
        }
    }
    for ((method, task, d, k_hat), pts) in by_gamma {
        if let Ok(fit) = fit_loglog_slope(&pts) {
            out.push(SlopeRow {
                method,
                task,
                over: "gamma",
                gamma: None,
                k_hat,
                d: Some(d),
                points: pts.len(),
                fit,
            });
        }
    }
    out
}

/// Files written by [`report`].
#[derive(Debug, Clone)]
pub struct Report {
    pub aggregate: Vec<AggregateRow>,
    pub slopes: Vec<SlopeRow>,
    pub aggregate_path: PathBuf,
    pub slopes_path: PathBuf,
}

/// Reads `summary_csv` and writes `aggregate.csv` and `slopes.csv` next to
/// it (or into `out_dir`).
pub fn report(summary_csv: &Path, out_dir: Option<&Path>) -> Result<Report> {
    let rows = read_summary(summary_csv)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| summary_csv.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&dir)?;
    let agg = aggregate(&rows);
    let sl = slopes(&agg);

    let mut text = format!("{AGGREGATE_HEADER}\n");
    agg.iter().for_each(|r| text.push_str(&format!("{}\n", r.to_csv_row())));
    let aggregate_path = dir.join("aggregate.csv");
    write_atomic(&aggregate_path, text.as_bytes())?;

    let mut text = format!("{SLOPES_HEADER}\n");
    sl.iter().for_each(|r| text.push_str(&format!("{}\n", r.to_csv_row())));
    let slopes_path = dir.join("slopes.csv");
    write_atomic(&slopes_path, text.as_bytes())?;

    Ok(Report {
        aggregate: agg,
        slopes: sl,
        aggregate_path,
        slopes_path,
    })
}
