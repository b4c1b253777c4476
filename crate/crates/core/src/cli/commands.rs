use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::{
    fmt_f64, io_err, unix_now, Checkpoint, CsvWriter, RunManifest, RunStatus, RunSummary, ARTIFACT_VERSION,
};
use super::config::RunConfig;
use crate::envs::{Split, TaskFamily};
use crate::error::{Error, Result};
use crate::eval::{adaptation_curve, compare_baseline, evaluate_split, BaselineComparison, SplitReport, StreamSharing};
use crate::maml::{meta_iteration, sample_tasks, IterationOutput};
use crate::policy::{init_params, PolicyParams, ValueParams};
use crate::rng::{tag, RngStream};

pub const TRAIN_HEADER: [&str; 7] = ["iteration", "loss_pre", "loss_post", "accepted", "kl", "step_coeff", "success_train"];
pub const EVAL_HEADER: [&str; 4] = ["iteration", "split", "success", "mean_return"];
pub const CURVE_HEADER: [&str; 4] = ["task_index", "step", "mean_return", "success"];

/// What a training observer sees after each meta-iteration.
pub struct IterationEvent<'a> {
    pub theta_before: &'a PolicyParams,
    pub output: &'a IterationOutput,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub theta: PolicyParams,
    pub vparams: ValueParams,
    pub summary: RunSummary,
}

pub fn checkpoint_path(out_dir: &Path, iteration: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("ckpt_{iteration:06}.json"))
}

/// Initial parameters of a run with `cfg.seed`.
pub fn initial_params(cfg: &RunConfig) -> (PolicyParams, ValueParams) {
    let root = RngStream::new(cfg.seed);
    (
        init_params(cfg.policy_shape(), &mut root.child(tag::POLICY_INIT).rng()),
        init_params(cfg.value_shape(), &mut root.child(tag::VALUE_INIT).rng()),
    )
}

fn save_checkpoint(cfg: &RunConfig, path: &Path, iteration: usize, theta: &PolicyParams, v: &ValueParams) -> Result<()> {
    Checkpoint {
        version: ARTIFACT_VERSION.into(),
        iteration,
        families: cfg.families.clone(),
        policy: theta.clone(),
        value: v.clone(),
    }
    .write(path)
}

/// Runs meta-training into `cfg.out_dir`, calling `hook` after every
/// iteration. Writes `manifest.json` on success and on failure.
pub fn train(cfg: &RunConfig, hook: &mut dyn FnMut(&IterationEvent<'_>)) -> Result<TrainResult> {
    cfg.validate()?;
    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out.join("checkpoints")).map_err(io_err(out))?;
    let manifest_path = out.join("manifest.json");
    let mut manifest = RunManifest {
        status: RunStatus::Running,
        error: None,
        version: ARTIFACT_VERSION.into(),
        config: cfg.clone(),
        started: unix_now(),
        finished: None,
        summary: RunSummary {
            iterations_completed: 0,
            accepted_steps: 0,
            final_loss_pre: None,
            final_loss_post: None,
            final_success_train: None,
            final_eval_success_train: None,
            final_eval_success_test: None,
        },
    };
    manifest.write(&manifest_path)?;

    let result = train_loop(cfg, hook, &mut manifest.summary);
    manifest.finished = Some(unix_now());
    match &result {
        Ok(_) => manifest.status = RunStatus::Completed,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
        }
    }
    manifest.write(&manifest_path)?;
    result.map(|(theta, vparams)| TrainResult {
        theta,
        vparams,
        summary: manifest.summary,
    })
}

fn train_loop(
    cfg: &RunConfig,
    hook: &mut dyn FnMut(&IterationEvent<'_>),
    summary: &mut RunSummary,
) -> Result<(PolicyParams, ValueParams)> {
    let out = cfg.out_dir.as_path();
    let mut train_csv = CsvWriter::create(&out.join("train_metrics.csv"), &TRAIN_HEADER)?;
    let mut eval_csv = CsvWriter::create(&out.join("eval_metrics.csv"), &EVAL_HEADER)?;
    let root = RngStream::new(cfg.seed);
    let (mut theta, mut vparams) = initial_params(cfg);
    save_checkpoint(cfg, &checkpoint_path(out, 0), 0, &theta, &vparams)?;

    for i in 0..cfg.hyper.meta_iterations {
        let output = meta_iteration(&theta, &vparams, &cfg.hyper, &cfg.families, root, i)?;
        hook(&IterationEvent {
            theta_before: &theta,
            output: &output,
        });
        let r = &output.record;
        train_csv.write_fields([
            i.to_string(),
            fmt_f64(r.mean_loss_pre),
            fmt_f64(r.mean_loss_post),
            u8::from(r.accepted_step).to_string(),
            fmt_f64(r.kl_after_step),
            fmt_f64(r.step_coefficient),
            fmt_f64(r.success_train),
        ])?;
        summary.iterations_completed = i + 1;
        summary.accepted_steps += usize::from(r.accepted_step);
        summary.final_loss_pre = Some(r.mean_loss_pre);
        summary.final_loss_post = Some(r.mean_loss_post);
        summary.final_success_train = Some(r.success_train);
        theta = output.theta;
        vparams = output.vparams;

        if (i + 1) % cfg.eval_every == 0 {
            for (split, t) in [(Split::Train, tag::EVAL_TRAIN), (Split::Test, tag::EVAL_TEST)] {
                let report = evaluate_split(
                    &theta,
                    &vparams,
                    &cfg.families,
                    split,
                    cfg.eval_tasks,
                    cfg.hyper.inner_steps_train,
                    &cfg.hyper,
                    root.child(t).child(i as u64),
                )?;
                eval_csv.write_fields([
                    i.to_string(),
                    split.name().to_string(),
                    fmt_f64(report.success_rate),
                    fmt_f64(report.mean_return),
                ])?;
                match split {
                    Split::Train => summary.final_eval_success_train = Some(report.success_rate),
                    Split::Test => summary.final_eval_success_test = Some(report.success_rate),
                }
            }
        }
        if (i + 1) % cfg.checkpoint_every == 0 {
            save_checkpoint(cfg, &checkpoint_path(out, i + 1), i + 1, &theta, &vparams)?;
        }
    }
    save_checkpoint(cfg, &out.join("checkpoint.json"), cfg.hyper.meta_iterations, &theta, &vparams)?;
    Ok((theta, vparams))
}

/// `train` subcommand body.
pub fn run_train(cfg: &RunConfig) -> Result<RunSummary> {
    train(cfg, &mut |_| {}).map(|r| r.summary)
}

fn load_checkpoint(path: &Path, families: &[TaskFamily]) -> Result<Checkpoint> {
    let ck = Checkpoint::read(path)?;
    ck.check_families(families)?;
    Ok(ck)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalReport {
    Split {
        checkpoint: PathBuf,
        seed: u64,
        report: SplitReport,
    },
    Baseline {
        checkpoint: PathBuf,
        seed: u64,
        comparison: BaselineComparison,
    },
}

pub struct EvalRequest<'a> {
    pub checkpoint: &'a Path,
    pub split: Split,
    pub n_tasks: usize,
    pub inner_steps: usize,
    pub seed: u64,
    pub baseline: bool,
}

/// `eval` subcommand body: writes `eval_report.json` into `cfg.out_dir`.
pub fn run_eval(cfg: &RunConfig, req: &EvalRequest<'_>) -> Result<EvalReport> {
    if req.n_tasks == 0 {
        return Err(Error::config("tasks", "must be at least 1"));
    }
    let ck = load_checkpoint(req.checkpoint, &cfg.families)?;
    let report = if req.baseline {
        EvalReport::Baseline {
            checkpoint: req.checkpoint.to_path_buf(),
            seed: req.seed,
            comparison: compare_baseline(
                &ck.policy,
                &ck.value,
                &cfg.families,
                req.split,
                req.n_tasks,
                req.inner_steps,
                &cfg.hyper,
                req.seed,
                StreamSharing::Shared,
            )?,
        }
    } else {
        EvalReport::Split {
            checkpoint: req.checkpoint.to_path_buf(),
            seed: req.seed,
            report: evaluate_split(
                &ck.policy,
                &ck.value,
                &cfg.families,
                req.split,
                req.n_tasks,
                req.inner_steps,
                &cfg.hyper,
                RngStream::new(req.seed).child(tag::EVAL),
            )?,
        }
    };
    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("eval_report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(report)
}

pub struct CurveRequest<'a> {
    pub checkpoint: &'a Path,
    pub family: TaskFamily,
    pub split: Split,
    pub steps: usize,
    pub n_tasks: usize,
    pub seed: u64,
}

/// `adapt-curve` subcommand body: writes `adapt_curve.csv` into
/// `cfg.out_dir` with `(steps + 1) · n_tasks` rows.
pub fn run_adapt_curve(cfg: &RunConfig, req: &CurveRequest<'_>) -> Result<Vec<crate::eval::AdaptationCurve>> {
    if req.steps == 0 {
        return Err(Error::config("steps", "must be at least 1"));
    }
    if req.n_tasks == 0 {
        return Err(Error::config("tasks", "must be at least 1"));
    }
    let ck = load_checkpoint(req.checkpoint, &[req.family])?;
    let stream = RngStream::new(req.seed).child(tag::EVAL);
    let tasks = sample_tasks(&[req.family], req.split, req.n_tasks, stream.child(tag::TASK))?;
    let curves = crate::maml::map_indexed(tasks.len(), cfg.hyper.parallel, |i| {
        adaptation_curve(&ck.policy, &ck.value, &tasks[i], req.steps, &cfg.hyper, stream.child(i as u64))
    })?;

    let out = cfg.out_dir.as_path();
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut csv = CsvWriter::create(&out.join("adapt_curve.csv"), &CURVE_HEADER)?;
    for (i, c) in curves.iter().enumerate() {
        for k in 0..=req.steps {
            csv.write_fields([
                i.to_string(),
                k.to_string(),
                fmt_f64(c.returns_per_step[k]),
                fmt_f64(c.success_per_step[k]),
            ])?;
        }
    }
    Ok(curves)
}
