//! Evaluation protocol: k-step adaptation curves, per-split success rates,
//! and paired comparison against an untrained initialization.

use serde::{Deserialize, Serialize};

use crate::envs::{Split, TaskFamily, TaskSpec};
use crate::error::{Error, Result};
use crate::maml::{adapt, inner_update, map_indexed, sample_tasks, HyperConfig};
use crate::numerics::gradient;
use crate::policy::losses::PolicyGradientLoss;
use crate::policy::{init_params, PolicyParams, ValueParams};
use crate::rng::{tag, RngStream};
use crate::rollout::{advantages, collect, TrajectoryBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationCurve {
    pub task: TaskSpec,
    /// Entry `k` is the mean return after `k` inner updates.
    pub returns_per_step: Vec<f64>,
    pub success_per_step: Vec<f64>,
}

/// Return and success after `0..=max_steps` cumulative inner updates.
///
/// Every evaluation batch draws from the same `stream.child(EVAL)`, so the
/// steps differ only through the parameters. Update `k` uses its own fresh
/// support batch from `stream.child(SUPPORT).child(k)`, exactly as
/// [`adapt`] does.
pub fn adaptation_curve(
    theta: &PolicyParams,
    vparams: &ValueParams,
    task: &TaskSpec,
    max_steps: usize,
    cfg: &HyperConfig,
    stream: RngStream,
) -> Result<AdaptationCurve> {
    if max_steps == 0 {
        return Err(Error::Empty("adaptation_curve needs max_steps >= 1"));
    }
    let mut params = theta.clone();
    let mut returns = Vec::with_capacity(max_steps + 1);
    let mut success = Vec::with_capacity(max_steps + 1);
    for k in 0..=max_steps {
        let eval = collect(task, &params, cfg.episodes_per_task, cfg.horizon, stream.child(tag::EVAL))?;
        returns.push(eval.mean_return());
        success.push(eval.success_rate());
        if k == max_steps {
            break;
        }
        let support = collect(
            task,
            &params,
            cfg.episodes_per_task,
            cfg.horizon,
            stream.child(tag::SUPPORT).child(k as u64),
        )?;
        let adv = advantages(&support, vparams, cfg.gamma, cfg.lambda)?;
        let samples = support.samples(&adv);
        let grad = gradient(
            &PolicyGradientLoss {
                shape: &params.shape,
                samples: &samples,
            },
            &params.values,
        )?;
        params = inner_update(&params, &grad, cfg.alpha)?.0;
    }
    Ok(AdaptationCurve {
        task: *task,
        returns_per_step: returns,
        success_per_step: success,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: TaskSpec,
    pub episodes: usize,
    pub successes_pre: usize,
    pub successes_post: usize,
    pub return_pre: f64,
    pub return_post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: TaskFamily,
    pub tasks: usize,
    pub episodes: usize,
    pub success_rate_pre: f64,
    pub success_rate_post: f64,
    pub mean_return_pre: f64,
    pub mean_return_post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: Split,
    pub inner_steps: usize,
    /// Families that appeared, in the order first seen.
    pub families: Vec<FamilyReport>,
    pub tasks: Vec<TaskOutcome>,
    /// Post-adaptation success over all episodes.
    pub success_rate: f64,
    /// Post-adaptation mean episode return over all episodes.
    pub mean_return: f64,
    pub success_rate_pre: f64,
    pub mean_return_pre: f64,
}

fn outcome(pre: &TrajectoryBatch, post: &TrajectoryBatch) -> TaskOutcome {
    TaskOutcome {
        task: pre.task,
        episodes: post.trajectories.len(),
        successes_pre: pre.successes(),
        successes_post: post.successes(),
        return_pre: pre.mean_return(),
        return_post: post.mean_return(),
    }
}

fn summarize(split: Split, inner_steps: usize, tasks: Vec<TaskOutcome>) -> SplitReport {
    let mut families: Vec<FamilyReport> = Vec::new();
    for t in &tasks {
        let idx = match families.iter().position(|f| f.family == t.task.family) {
            Some(i) => i,
            None => {
                families.push(FamilyReport {
                    family: t.task.family,
                    tasks: 0,
                    episodes: 0,
                    success_rate_pre: 0.0,
                    success_rate_post: 0.0,
                    mean_return_pre: 0.0,
                    mean_return_post: 0.0,
                });
                families.len() - 1
            }
        };
        let f = &mut families[idx];
        f.tasks += 1;
        f.episodes += t.episodes;
        // Accumulate totals; divided below.
        f.success_rate_pre += t.successes_pre as f64;
        f.success_rate_post += t.successes_post as f64;
        f.mean_return_pre += t.return_pre * t.episodes as f64;
        f.mean_return_post += t.return_post * t.episodes as f64;
    }
    let episodes: usize = families.iter().map(|f| f.episodes).sum();
    let total = |get: fn(&FamilyReport) -> f64| families.iter().map(get).sum::<f64>() / episodes as f64;
    let success_rate = total(|f| f.success_rate_post);
    let success_rate_pre = total(|f| f.success_rate_pre);
    let mean_return = total(|f| f.mean_return_post);
    let mean_return_pre = total(|f| f.mean_return_pre);
    for f in &mut families {
        let n = f.episodes as f64;
        f.success_rate_pre /= n;
        f.success_rate_post /= n;
        f.mean_return_pre /= n;
        f.mean_return_post /= n;
    }
    SplitReport {
        split,
        inner_steps,
        families,
        tasks,
        success_rate,
        mean_return,
        success_rate_pre,
        mean_return_pre,
    }
}

/// Pre- and post-adaptation performance on given tasks. Task `i` draws
/// from `stream.child(i)`; its pre and post evaluation batches share the
/// same `EVAL` stream.
pub fn evaluate_tasks(
    theta: &PolicyParams,
    vparams: &ValueParams,
    tasks: &[TaskSpec],
    split: Split,
    inner_steps: usize,
    cfg: &HyperConfig,
    stream: RngStream,
) -> Result<SplitReport> {
    if tasks.is_empty() {
        return Err(Error::Empty("evaluation needs at least one task"));
    }
    let outcomes = map_indexed(tasks.len(), cfg.parallel, |i| {
        let s = stream.child(i as u64);
        let pre = collect(&tasks[i], theta, cfg.episodes_per_task, cfg.horizon, s.child(tag::EVAL))?;
        let adapted = adapt(theta, &tasks[i], inner_steps, cfg, vparams, s)?.adapted;
        let post = if inner_steps == 0 {
            pre.clone()
        } else {
            collect(&tasks[i], &adapted, cfg.episodes_per_task, cfg.horizon, s.child(tag::EVAL))?
        };
        Ok(outcome(&pre, &post))
    })?;
    Ok(summarize(split, inner_steps, outcomes))
}

/// Samples `n_tasks` tasks of `split` and evaluates them.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_split(
    theta: &PolicyParams,
    vparams: &ValueParams,
    families: &[TaskFamily],
    split: Split,
    n_tasks: usize,
    inner_steps: usize,
    cfg: &HyperConfig,
    stream: RngStream,
) -> Result<SplitReport> {
    if n_tasks == 0 {
        return Err(Error::Empty("evaluate_split needs n_tasks >= 1"));
    }
    let tasks = sample_tasks(families, split, n_tasks, stream.child(tag::TASK))?;
    evaluate_tasks(theta, vparams, &tasks, split, inner_steps, cfg, stream)
}

/// How the two arms of a baseline comparison draw rollout randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSharing {
    /// Both arms see the same rollout streams (common random numbers).
    Shared,
    /// Each arm gets its own streams.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub meta: SplitReport,
    pub baseline: SplitReport,
    /// Post-adaptation return of the meta arm minus the baseline arm, per task.
    pub return_differences: Vec<f64>,
    pub mean_difference: f64,
}

/// The untrained initialization a training run with `seed` starts from.
pub fn untrained_params(shape: &PolicyParams, vshape: &ValueParams, seed: u64) -> (PolicyParams, ValueParams) {
    let root = RngStream::new(seed);
    (
        init_params(shape.shape.clone(), &mut root.child(tag::POLICY_INIT).rng()),
        init_params(vshape.shape.clone(), &mut root.child(tag::VALUE_INIT).rng()),
    )
}

/// Paired comparison of `theta` against the untrained initialization for
/// `seed`, on the same `n_tasks` tasks and the same adaptation protocol.
#[allow(clippy::too_many_arguments)]
pub fn compare_baseline(
    theta: &PolicyParams,
    vparams: &ValueParams,
    families: &[TaskFamily],
    split: Split,
    n_tasks: usize,
    inner_steps: usize,
    cfg: &HyperConfig,
    seed: u64,
    sharing: StreamSharing,
) -> Result<BaselineComparison> {
    if n_tasks == 0 {
        return Err(Error::Empty("compare_baseline needs n_tasks >= 1"));
    }
    let root = RngStream::new(seed).child(tag::BASELINE);
    let tasks = sample_tasks(families, split, n_tasks, root.child(tag::TASK))?;
    let (meta_stream, base_stream) = match sharing {
        StreamSharing::Shared => (root, root),
        StreamSharing::Independent => (root.child(tag::META_ARM), root.child(tag::BASELINE_ARM)),
    };
    let (base_theta, base_v) = untrained_params(theta, vparams, seed);
    let meta = evaluate_tasks(theta, vparams, &tasks, split, inner_steps, cfg, meta_stream)?;
    let baseline = evaluate_tasks(&base_theta, &base_v, &tasks, split, inner_steps, cfg, base_stream)?;
    let return_differences: Vec<f64> = meta
        .tasks
        .iter()
        .zip(&baseline.tasks)
        .map(|(m, b)| m.return_post - b.return_post)
        .collect();
    let mean_difference = return_differences.iter().sum::<f64>() / return_differences.len() as f64;
    Ok(BaselineComparison {
        meta,
        baseline,
        return_differences,
        mean_difference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::sample_task;
    use crate::policy::{PolicyShape, ValueShape};

    fn small() -> (PolicyParams, ValueParams, HyperConfig) {
        let cfg = HyperConfig {
            episodes_per_task: 3,
            horizon: 10,
            ..HyperConfig::default()
        };
        let theta = init_params(PolicyShape::with_hidden(4, 2, vec![8]), &mut RngStream::new(1).rng());
        let v = init_params(ValueShape::with_hidden(4, vec![4]), &mut RngStream::new(2).rng());
        (theta, v, cfg)
    }

    #[test]
    fn curve_has_k_plus_one_entries() {
        let (theta, v, cfg) = small();
        let task = sample_task(TaskFamily::PointReach, Split::Train, &mut RngStream::new(3).rng());
        let c = adaptation_curve(&theta, &v, &task, 3, &cfg, RngStream::new(4)).unwrap();
        assert_eq!(c.returns_per_step.len(), 4);
        assert_eq!(c.success_per_step.len(), 4);
        assert!(c.success_per_step.iter().all(|s| (0.0..=1.0).contains(s)));
        assert!(adaptation_curve(&theta, &v, &task, 0, &cfg, RngStream::new(4)).is_err());
    }

    #[test]
    fn zero_alpha_curve_is_flat() {
        let (theta, v, mut cfg) = small();
        cfg.alpha = 0.0;
        let task = sample_task(TaskFamily::Hinge, Split::Test, &mut RngStream::new(5).rng());
        let c = adaptation_curve(&theta, &v, &task, 3, &cfg, RngStream::new(6)).unwrap();
        assert!(c.returns_per_step.iter().all(|r| *r == c.returns_per_step[0]));
        assert!(c.success_per_step.iter().all(|r| *r == c.success_per_step[0]));
    }

    #[test]
    fn curve_step_one_matches_adapt() {
        let (theta, v, cfg) = small();
        let task = sample_task(TaskFamily::PointReach, Split::Train, &mut RngStream::new(7).rng());
        let stream = RngStream::new(8);
        let c = adaptation_curve(&theta, &v, &task, 1, &cfg, stream).unwrap();
        let adapted = adapt(&theta, &task, 1, &cfg, &v, stream).unwrap().adapted;
        let eval = collect(&task, &adapted, cfg.episodes_per_task, cfg.horizon, stream.child(tag::EVAL)).unwrap();
        assert_eq!(c.returns_per_step[1], eval.mean_return());
    }

    #[test]
    fn aggregate_is_episode_weighted() {
        let (theta, v, cfg) = small();
        let r = evaluate_split(&theta, &v, &TaskFamily::ALL, Split::Train, 9, 1, &cfg, RngStream::new(9)).unwrap();
        assert_eq!(r.tasks.len(), 9);
        let eps: usize = r.families.iter().map(|f| f.episodes).sum();
        let weighted: f64 = r.families.iter().map(|f| f.success_rate_post * f.episodes as f64).sum::<f64>() / eps as f64;
        assert!((weighted - r.success_rate).abs() < 1e-12);
        let by_task: usize = r.tasks.iter().map(|t| t.successes_post).sum();
        assert!((by_task as f64 / eps as f64 - r.success_rate).abs() < 1e-12);
    }

    #[test]
    fn zero_inner_steps_reports_pre_equals_post() {
        let (theta, v, cfg) = small();
        let r = evaluate_split(&theta, &v, &[TaskFamily::PointReach], Split::Test, 3, 0, &cfg, RngStream::new(10))
            .unwrap();
        assert_eq!(r.success_rate, r.success_rate_pre);
        assert_eq!(r.mean_return, r.mean_return_pre);
    }

    #[test]
    fn self_comparison_with_shared_streams_is_zero() {
        let (_, _, cfg) = small();
        let shape = PolicyShape::with_hidden(4, 2, vec![8]);
        let vshape = ValueShape::with_hidden(4, vec![4]);
        let seed = 11;
        let (theta, v) = untrained_params(
            &crate::policy::ParamVector::zeros(shape),
            &crate::policy::ParamVector::zeros(vshape),
            seed,
        );
        let c = compare_baseline(&theta, &v, &TaskFamily::ALL, Split::Train, 4, 1, &cfg, seed, StreamSharing::Shared)
            .unwrap();
        assert!(c.return_differences.iter().all(|d| *d == 0.0));
        assert_eq!(c.mean_difference, 0.0);
    }
}
