use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adapt::{adapt_from, tape_log_probs, InnerStep};
use super::meta::meta_gradient;
use super::trpo::{trpo_step, TrpoOutcome};
use super::{map_indexed, HyperConfig};
use crate::envs::{sample_task, Split, TaskFamily, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::losses::Samples;
use crate::policy::{fit_value, PolicyParams, ValueParams};
use crate::rng::{tag, RngStream};
use crate::rollout::{advantages, collect, TrajectoryBatch};

/// Everything the outer step needs about one task of the meta-batch.
#[derive(Debug, Clone)]
pub struct TaskAdaptation {
    pub task: TaskSpec,
    pub support: Vec<InnerStep>,
    pub adapted: PolicyParams,
    pub query: TrajectoryBatch,
    /// Query samples with normalized advantages. `log_probs` hold the
    /// adapted policy's log-densities as evaluated on the tape.
    pub query_samples: Samples,
    /// Negative mean episode return of `θ` on the first support batch.
    pub loss_pre: f64,
    /// Negative mean episode return of `θ′` on the query batch.
    pub loss_post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaIterationRecord {
    pub iteration: usize,
    /// Task loss (negative mean return) before adaptation, averaged over tasks.
    pub mean_loss_pre: f64,
    /// Task loss after adaptation, averaged over tasks.
    pub mean_loss_post: f64,
    /// Post-adaptation success fraction over all query episodes.
    pub success_train: f64,
    pub success_test: Option<f64>,
    pub accepted_step: bool,
    pub kl_after_step: f64,
    pub step_coefficient: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
}

#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub theta: PolicyParams,
    pub vparams: ValueParams,
    pub record: MetaIterationRecord,
    pub trpo: TrpoOutcome,
    pub tasks: Vec<TaskAdaptation>,
}

/// `n` tasks with families drawn uniformly from `families`. Task `i` only
/// depends on `stream.child(i)`.
pub fn sample_tasks(families: &[TaskFamily], split: Split, n: usize, stream: RngStream) -> Result<Vec<TaskSpec>> {
    if families.is_empty() {
        return Err(Error::Empty("task families"));
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = stream.child(i as u64).rng();
            let family = families[rng.random_range(0..families.len())];
            sample_task(family, split, &mut rng)
        })
        .collect())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// One meta-iteration from `theta`.
///
/// Draws `meta_batch_tasks` training tasks, collects a support batch per
/// task under `theta`, refits the value net on the pooled support data,
/// adapts, collects query batches under the adapted parameters, and takes a
/// TRPO step on the meta-surrogate. All randomness comes from
/// `stream.child(ITERATION).child(iteration)`.
pub fn meta_iteration(
    theta: &PolicyParams,
    vparams: &ValueParams,
    cfg: &HyperConfig,
    families: &[TaskFamily],
    stream: RngStream,
    iteration: usize,
) -> Result<IterationOutput> {
    let it = stream.child(tag::ITERATION).child(iteration as u64);
    let tasks = sample_tasks(families, Split::Train, cfg.meta_batch_tasks, it.child(tag::TASK))?;
    let task_stream = |i: usize| it.child(tag::ROLLOUT).child(i as u64);

    let first_support = map_indexed(tasks.len(), cfg.parallel, |i| {
        collect(
            &tasks[i],
            theta,
            cfg.episodes_per_task,
            cfg.horizon,
            task_stream(i).child(tag::SUPPORT).child(0),
        )
    })?;
    let vparams = fit_value(vparams, &first_support, cfg.gamma, &cfg.value_fit())?.params;

    let firsts: Vec<Mutex<Option<TrajectoryBatch>>> =
        first_support.into_iter().map(|b| Mutex::new(Some(b))).collect();

    let adapted = map_indexed(tasks.len(), cfg.parallel, |i| {
        let first = firsts[i].lock().expect("unpoisoned").take();
        let a = adapt_from(
            theta,
            &tasks[i],
            cfg.inner_steps_train,
            cfg,
            &vparams,
            task_stream(i),
            first,
        )?;
        let query = collect(
            &tasks[i],
            &a.adapted,
            cfg.episodes_per_task,
            cfg.horizon,
            task_stream(i).child(tag::QUERY),
        )?;
        let adv = advantages(&query, &vparams, cfg.gamma, cfg.lambda)?;
        let mut query_samples = query.samples(&adv);
        query_samples.log_probs = tape_log_probs(&a.adapted, &query_samples);
        let loss_pre = -a.steps[0].batch.mean_return();
        let loss_post = -query.mean_return();
        Ok(TaskAdaptation {
            task: tasks[i],
            support: a.steps,
            adapted: a.adapted,
            query,
            query_samples,
            loss_pre,
            loss_post,
        })
    })?;

    let grad = meta_gradient(theta, &adapted, cfg)?;
    let trpo = trpo_step(theta, &grad, &adapted, cfg)?;
    if !trpo.theta.is_finite() {
        return Err(Error::NonFinite { op: "meta update" });
    }

    let query_episodes: usize = adapted.iter().map(|t| t.query.trajectories.len()).sum();
    let query_successes: usize = adapted.iter().map(|t| t.query.successes()).sum();
    let record = MetaIterationRecord {
        iteration,
        mean_loss_pre: mean(adapted.iter().map(|t| t.loss_pre)),
        mean_loss_post: mean(adapted.iter().map(|t| t.loss_post)),
        success_train: query_successes as f64 / query_episodes as f64,
        success_test: None,
        accepted_step: trpo.accepted,
        kl_after_step: trpo.kl,
        step_coefficient: trpo.step_coefficient,
        surrogate_before: trpo.surrogate_before,
        surrogate_after: trpo.surrogate_after,
    };
    if !(record.mean_loss_pre.is_finite() && record.mean_loss_post.is_finite()) {
        return Err(Error::NonFinite { op: "inner loss" });
    }
    Ok(IterationOutput {
        theta: trpo.theta.clone(),
        vparams,
        record,
        trpo,
        tasks: adapted,
    })
}
