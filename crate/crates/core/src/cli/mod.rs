//! Experiment runner: configuration, artifacts and the three subcommands.
//!
//! Precedence for every setting is flag > config file > preset default.
//! Exit codes: 0 success, 1 configuration or input error, 2 numerical
//! failure during a run.

mod artifacts;
mod commands;
mod config;

pub use artifacts::{
    fmt_f64, unix_now, Checkpoint, CsvWriter, RunManifest, RunStatus, RunSummary, ARTIFACT_VERSION,
};
pub use commands::{
    checkpoint_path, initial_params, run_adapt_curve, run_eval, run_train, train, CurveRequest, EvalReport,
    EvalRequest, IterationEvent, TrainResult, CURVE_HEADER, EVAL_HEADER, TRAIN_HEADER,
};
pub use config::{Overrides, Preset, RunConfig};

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::envs::{Split, TaskFamily};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "maml-trpo", version, about = "Meta-train and evaluate a MAML policy with a TRPO outer loop")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON file with config fields to override the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Paper)]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Meta-train and write metrics, checkpoints and a manifest.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on a task split, optionally against the
    /// untrained initialization.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        /// Number of tasks (default: the config's eval_tasks).
        #[arg(long)]
        tasks: Option<usize>,
        /// Inner adaptation steps (default: the config's inner_steps_train).
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        baseline: bool,
    },
    /// Return and success after 0..=K inner steps, per task.
    AdaptCurve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "point_reach")]
        family: TaskFamily,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, default_value_t = 3)]
        steps: usize,
        /// Number of tasks (default: the config's eval_tasks).
        #[arg(long)]
        tasks: Option<usize>,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    RunConfig::resolve(
        common.preset,
        common.config.as_deref(),
        &Overrides {
            seed: common.seed,
            out_dir: common.out.clone(),
        },
    )
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Train { common } => resolve(&common).and_then(|cfg| {
            let summary = run_train(&cfg)?;
            println!(
                "trained {} iterations ({} accepted steps) into {}",
                summary.iterations_completed,
                summary.accepted_steps,
                cfg.out_dir.display()
            );
            Ok(())
        }),
        Command::Eval {
            common,
            checkpoint,
            split,
            tasks,
            steps,
            baseline,
        } => resolve(&common).and_then(|cfg| {
            let req = EvalRequest {
                checkpoint: &checkpoint,
                split,
                n_tasks: tasks.unwrap_or(cfg.eval_tasks),
                inner_steps: steps.unwrap_or(cfg.hyper.inner_steps_train),
                seed: cfg.seed,
                baseline,
            };
            match run_eval(&cfg, &req)? {
                EvalReport::Split { report, .. } => println!(
                    "{} split: success {:.3} (pre {:.3}), mean return {:.3}",
                    split.name(),
                    report.success_rate,
                    report.success_rate_pre,
                    report.mean_return
                ),
                EvalReport::Baseline { comparison, .. } => println!(
                    "{} split: meta success {:.3}, untrained success {:.3}, mean return difference {:.3}",
                    split.name(),
                    comparison.meta.success_rate,
                    comparison.baseline.success_rate,
                    comparison.mean_difference
                ),
            }
            Ok(())
        }),
        Command::AdaptCurve {
            common,
            checkpoint,
            family,
            split,
            steps,
            tasks,
        } => resolve(&common).and_then(|cfg| {
            let req = CurveRequest {
                checkpoint: &checkpoint,
                family,
                split,
                steps,
                n_tasks: tasks.unwrap_or(cfg.eval_tasks),
                seed: cfg.seed,
            };
            let curves = run_adapt_curve(&cfg, &req)?;
            for k in 0..=steps {
                let mean = curves.iter().map(|c| c.returns_per_step[k]).sum::<f64>() / curves.len() as f64;
                println!("step {k}: mean return {mean:.3}");
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for configuration and input problems, 2 for failures during a run.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        1
    } else {
        2
    }
}

/// Parses `std::env::args` and runs. Argument errors exit with code 1.
pub fn main() -> ExitCode {
    match Cli::try_parse() {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
