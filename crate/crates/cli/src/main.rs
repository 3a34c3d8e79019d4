use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fsgd::harness::{self, ExperimentPlan, RunOptions, RunSummary, Task};
use fsgd::streamgen::{sample_batch, write_csv, FactorModelSpec};

#[derive(Parser)]
#[command(name = "fsgd", version, about = "Streaming factor-augmented SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Exec {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Repetitions per grid point.
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads.
    #[arg(long, env = "FSGD_WORKERS")]
    workers: Option<usize>,
    /// Base seed; repetition r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip runs that already completed in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Linear,
    Additive,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic samples as `y,x_1..x_d[,f_1..f_k]` CSV.
    Gen {
        #[arg(long, default_value_t = 40)]
        d: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Number of rows.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, value_enum, default_value_t = GenKind::Linear)]
        kind: GenKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append the true factors to each row.
        #[arg(long)]
        truth: bool,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a plan file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        exec: Exec,
    },
    /// Error against d at fixed gamma.
    SweepD {
        #[command(flatten)]
        exec: Exec,
        /// Streaming horizon override.
        #[arg(long)]
        t_max: Option<usize>,
    },
    /// Error against gamma at d = 100.
    SweepGamma {
        #[command(flatten)]
        exec: Exec,
        #[arg(long)]
        t_max: Option<usize>,
    },
    /// Neural-network method comparison.
    NnCompare {
        #[command(flatten)]
        exec: Exec,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train on a CSV stream (`y,x_1..x_d[,f_1..f_k]`).
    Stream {
        /// Input CSV.
        input: PathBuf,
        /// Plan file supplying the settings; the input replaces its csv path.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k_hat: usize,
        /// Number of trailing truth columns.
        #[arg(long, default_value_t = 0)]
        truth_k: usize,
        #[arg(long, default_value_t = 0.6)]
        gamma: f64,
        #[command(flatten)]
        exec: Exec,
    },
    /// Aggregate a summary.csv into aggregate.csv and slopes.csv.
    Report {
        summary: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized invariant checks.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        cases: usize,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// `Ok(false)` when the command ran but something failed.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Gen {
            d,
            k,
            n,
            kind,
            seed,
            truth,
            out,
        } => {
            gen(d, k, n, kind, seed, truth, out.as_deref())?;
            Ok(true)
        }
        Command::Run { config, exec } => {
            let plan = harness::parse_config(&config).with_context(|| format!("reading {}", config.display()))?;
            execute(plan, &exec)
        }
        Command::SweepD { exec, t_max } => {
            let mut plan = harness::sweep_d_plan(20, 0, PathBuf::from("results/sweep-d"));
            if let Some(t) = t_max {
                plan.run.t_max = t;
            }
            execute(plan, &exec)
        }
        Command::SweepGamma { exec, t_max } => {
            let mut plan = harness::sweep_gamma_plan(20, 0, PathBuf::from("results/sweep-gamma"));
            if let Some(t) = t_max {
                plan.run.t_max = t;
            }
            execute(plan, &exec)
        }
        Command::NnCompare { exec, epochs } => {
            let mut plan = harness::nn_compare_plan(20, 0, PathBuf::from("results/nn-compare"));
            if let Some(e) = epochs {
                plan.nn.epochs = e;
            }
            execute(plan, &exec)
        }
        Command::Stream {
            input,
            config,
            k_hat,
            truth_k,
            gamma,
            exec,
        } => {
            let mut plan = match config {
                Some(path) => harness::parse_config(&path).with_context(|| format!("reading {}", path.display()))?,
                None => harness::parse_plan_text("name = stream\ntask = csv_stream\n[csv]\npath = -\n")?,
            };
            let from_file = matches!(plan.task, Task::CsvStream { .. });
            let truth_k = match plan.task {
                Task::CsvStream { truth_k: tk, .. } if tk > 0 && truth_k == 0 => tk,
                _ => truth_k,
            };
            plan.task = Task::CsvStream { path: input, truth_k };
            if !from_file || plan.name == "plan" {
                plan.name = "stream".into();
            }
            plan.grid.k_hat = vec![k_hat];
            plan.grid.gamma = vec![gamma];
            plan.grid.d = vec![0];
            if exec.out.is_none() && plan.out_dir == Path::new("results") {
                plan.out_dir = PathBuf::from("results/stream");
            }
            execute(plan, &exec)
        }
        Command::Report { summary, out } => {
            let rep = harness::report(&summary, out.as_deref())?;
            println!(
                "{} aggregate rows -> {}\n{} slope fits -> {}",
                rep.aggregate.len(),
                rep.aggregate_path.display(),
                rep.slopes.len(),
                rep.slopes_path.display()
            );
            Ok(true)
        }
        Command::Check { seed, cases } => {
            let outcomes = harness::run_checks(seed, cases);
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            Ok(outcomes.iter().all(|o| o.passed))
        }
    }
}

fn gen(d: usize, k: usize, n: usize, kind: GenKind, seed: u64, truth: bool, out: Option<&Path>) -> Result<()> {
    let spec = match kind {
        GenKind::Linear => FactorModelSpec::<f64>::linear_synthetic(d, k, seed)?,
        GenKind::Additive => FactorModelSpec::<f64>::additive_synthetic(d, k, seed)?,
    };
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    const CHUNK: usize = 256;
    let mut written = 0;
    let mut position = 0u64;
    while written < n {
        let take = CHUNK.min(n - written);
        let batch = sample_batch(&spec, take, position)?;
        write_csv(&mut sink, &[batch], truth)?;
        written += take;
        position += 1;
    }
    sink.flush()?;
    Ok(())
}

fn execute(mut plan: ExperimentPlan, exec: &Exec) -> Result<bool> {
    if let Some(out) = &exec.out {
        plan.out_dir = out.clone();
    }
    if let Some(r) = exec.reps {
        plan.reps = r;
    }
    if let Some(s) = exec.seed {
        plan.seed = s;
    }
    let options = RunOptions {
        workers: exec.workers.unwrap_or_else(harness::default_workers),
        resume: exec.resume,
    };
    let summaries = match plan.task {
        Task::NnSynth => harness::nn_experiment(&plan, options)?,
        _ => harness::run_plan(&plan, options)?,
    };
    let rep = harness::report(&plan.out_dir.join("summary.csv"), None)?;
    print_summary(&plan, &summaries);
    println!("wrote {}", rep.aggregate_path.display());
    Ok(summaries.iter().all(RunSummary::is_ok))
}

fn print_summary(plan: &ExperimentPlan, summaries: &[RunSummary]) {
    let resumed = summaries.iter().filter(|s| s.resumed).count();
    let failed: Vec<&RunSummary> = summaries.iter().filter(|s| !s.is_ok()).collect();
    println!(
        "{}: {} runs ({} resumed, {} failed) in {}",
        plan.name,
        summaries.len(),
        resumed,
        failed.len(),
        plan.out_dir.display()
    );
    for s in failed {
        println!("  {} d={} gamma={} rep={}: {}", s.method, s.d, s.gamma, s.rep, s.status);
    }
}
