//! Experiment orchestration: plan files, execution over a worker pool,
//! the neural-network comparison, aggregation and a quick self-check.

pub mod check;
pub mod config;
pub mod nn;
pub mod plan;
pub mod report;

use std::path::PathBuf;

pub use check::{run_checks, CheckOutcome};
pub use config::{parse_config, parse_plan_text};
pub use nn::{nn_experiment, run_nn, EpochPoint};
pub use plan::{
    default_workers, execute_point, read_summary, run_plan, write_summary, ExperimentPlan, Grid, GridPoint, Method,
    NnSettings, OjaChoice, PpcaSettings, RunOptions, RunOutcome, RunSettings, RunSummary, Task, SUMMARY_HEADER,
};
pub use report::{aggregate, fit_loglog_slope, mean_sd, median, report, AggregateRow, Report, SlopeFit, SlopeRow, Stat};

/// Streaming settings of the linear synthetic experiments: `k = 3`,
/// `m = 5`, `c = 0.5`, `T = 10⁵`, warm-up of 10 steps at 0.01, and the
/// gap-scaled Oja schedule `8 / ((50 + t)·ρ_k)` with the population gap.
pub fn linear_settings() -> RunSettings {
    RunSettings {
        k: 3,
        m: 5,
        t_max: 100_000,
        c: 0.5,
        t_offset: 1.0,
        oja: OjaChoice::Theoretical {
            alpha: 8.0,
            beta: 50.0,
            rho_k: None,
        },
        warmup_steps: 10,
        warmup_eta: 0.01,
        freeze_after: None,
        freeze_fraction: 0.5,
        align: false,
        norm_order: None,
        n_test: 1_000,
    }
}

/// Neural-network task at desk scale: width 50, 100 epochs, `m = 32`,
/// rate `0.05·t^{−0.3}`, 200 warm-up Oja steps at 0.005 on 50 unlabeled
/// samples, then `0.05/(50 + t)`.
pub fn nn_settings() -> NnSettings {
    NnSettings {
        width: 50,
        epochs: 100,
        n_train: 500,
        n_warmup: 50,
        n_valid: 150,
        n_test: 15_000,
        m: 32,
        c: 0.05,
        gamma: 0.3,
        warmup_steps: 200,
        warmup_eta: 0.005,
        oja_c: 0.05,
        oja_c0: 50.0,
    }
}

fn ppca_defaults() -> PpcaSettings {
    PpcaSettings {
        refresh_every: Some(10),
        window: 20,
        rotate_coeffs: true,
        align: false,
    }
}

/// FSGD error against `d ∈ {10, 20, 40, 80, 160, 320}` at `γ = 0.6`.
pub fn sweep_d_plan(reps: usize, seed: u64, out_dir: PathBuf) -> ExperimentPlan {
    ExperimentPlan {
        name: "sweep-d".into(),
        task: Task::LinearSynth,
        grid: Grid {
            d: vec![10, 20, 40, 80, 160, 320],
            gamma: vec![0.6],
            k_hat: vec![3],
            method: vec![Method::Fsgd],
        },
        reps,
        seed,
        out_dir,
        run: linear_settings(),
        ppca: ppca_defaults(),
        nn: nn_settings(),
    }
}

/// FSGD error against `γ` at `d = 100`.
pub fn sweep_gamma_plan(reps: usize, seed: u64, out_dir: PathBuf) -> ExperimentPlan {
    ExperimentPlan {
        name: "sweep-gamma".into(),
        grid: Grid {
            d: vec![100],
            gamma: vec![0.1, 0.3, 0.5, 0.6, 0.67, 0.7, 0.8, 0.9],
            k_hat: vec![3],
            method: vec![Method::Fsgd],
        },
        ..sweep_d_plan(reps, seed, out_dir)
    }
}

/// Neural-network method comparison at `d ∈ {100, 400}`, `k = k̂ = 5`.
pub fn nn_compare_plan(reps: usize, seed: u64, out_dir: PathBuf) -> ExperimentPlan {
    ExperimentPlan {
        name: "nn-compare".into(),
        task: Task::NnSynth,
        grid: Grid {
            d: vec![100, 400],
            gamma: vec![0.3],
            k_hat: vec![5],
            method: vec![
                Method::Fsgd,
                Method::FsgdFrozen,
                Method::Oracle,
                Method::Vanilla,
                Method::RandomProj,
                Method::Ppca,
            ],
        },
        reps,
        seed,
        out_dir,
        run: RunSettings {
            k: 5,
            ..linear_settings()
        },
        ppca: ppca_defaults(),
        nn: nn_settings(),
    }
}
