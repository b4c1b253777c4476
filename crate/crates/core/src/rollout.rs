//! Trajectory collection, discounted returns and generalized advantage
//! estimation.
//!
//! A policy may serve several task families at once, so its observation
//! and action widths are the maxima over those families. Observations are
//! zero-padded up to the policy width, and only the leading components of a
//! sampled action reach the environment.

use std::ops::Range;

use ndarray::{s, Array2};

use crate::envs::{self, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::losses::Samples;
use crate::policy::{distribution, predict_values, sample_action, PolicyParams, ValueParams};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(T + 1, obs_dim)`, padded to the policy's observation width.
    pub observations: Array2<f64>,
    /// `(T, act_dim)` raw (unclipped) policy samples.
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Whether any step met the task's success condition.
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub task: TaskSpec,
    pub trajectories: Vec<Trajectory>,
    pub collecting_params: PolicyParams,
}

impl TrajectoryBatch {
    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Fraction of episodes that met the success condition.
    pub fn success_rate(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.successes() as f64 / self.trajectories.len() as f64
    }

    pub fn successes(&self) -> usize {
        self.trajectories.iter().filter(|t| t.success).count()
    }

    /// Mean undiscounted episode return.
    pub fn mean_return(&self) -> f64 {
        if self.trajectories.is_empty() {
            return 0.0;
        }
        self.trajectories.iter().map(Trajectory::total_reward).sum::<f64>() / self.trajectories.len() as f64
    }

    /// Non-terminal observations of every trajectory, stacked.
    pub fn stacked_observations(&self) -> Array2<f64> {
        let obs_dim = self.collecting_params.shape.obs_dim;
        let mut out = Array2::zeros((self.total_steps(), obs_dim));
        let mut row = 0;
        for t in &self.trajectories {
            let n = t.len();
            out.slice_mut(s![row..row + n, ..]).assign(&t.observations.slice(s![..n, ..]));
            row += n;
        }
        out
    }

    /// Flattens the batch into per-step samples weighted by `advantages`
    /// (one array per trajectory).
    pub fn samples(&self, advantages: &[Vec<f64>]) -> Samples {
        let act_dim = self.collecting_params.shape.act_dim;
        let mut actions = Array2::zeros((self.total_steps(), act_dim));
        let mut row = 0;
        for t in &self.trajectories {
            actions.slice_mut(s![row..row + t.len(), ..]).assign(&t.actions);
            row += t.len();
        }
        let adv: Vec<f64> = advantages.iter().flatten().copied().collect();
        let lp: Vec<f64> = self.trajectories.iter().flat_map(|t| t.log_probs.iter().copied()).collect();
        Samples::new(self.stacked_observations(), actions, &adv, &lp)
    }
}

fn check_policy_fits(task: &TaskSpec, params: &PolicyParams) -> Result<()> {
    if params.shape.obs_dim < task.obs_dim() {
        return Err(Error::DimensionMismatch {
            context: "policy observation width for task family",
            expected: task.obs_dim(),
            found: params.shape.obs_dim,
        });
    }
    if params.shape.act_dim < task.act_dim() {
        return Err(Error::DimensionMismatch {
            context: "policy action width for task family",
            expected: task.act_dim(),
            found: params.shape.act_dim,
        });
    }
    Ok(())
}

fn run_episode(task: &TaskSpec, params: &PolicyParams, horizon: usize, stream: RngStream) -> Result<Trajectory> {
    let obs_dim = params.shape.obs_dim;
    let act_dim = params.shape.act_dim;
    let env_act = task.act_dim();
    let mut rng = stream.rng();

    let mut observations = Array2::zeros((horizon + 1, obs_dim));
    let mut actions = Array2::zeros((horizon, act_dim));
    let mut rewards = Vec::with_capacity(horizon);
    let mut log_probs = Vec::with_capacity(horizon);
    let mut success = false;

    let (mut state, first) = envs::reset(task, horizon, &mut rng);
    let mut obs = vec![0.0; obs_dim];
    obs[..first.len()].copy_from_slice(&first);
    observations.row_mut(0).as_slice_mut().expect("row")[..].copy_from_slice(&obs);

    for t in 0..horizon {
        let dist = distribution(params, &obs)?;
        let (action, lp) = sample_action(&dist, &mut rng);
        let tr = envs::step(&state, task, &action[..env_act])?;
        actions.row_mut(t).as_slice_mut().expect("row").copy_from_slice(&action);
        rewards.push(tr.reward);
        log_probs.push(lp);
        success |= tr.success;
        obs[..tr.observation.len()].copy_from_slice(&tr.observation);
        observations.row_mut(t + 1).as_slice_mut().expect("row").copy_from_slice(&obs);
        state = tr.state;
    }

    Ok(Trajectory {
        observations,
        actions,
        rewards,
        log_probs,
        success,
    })
}

/// Runs episodes `episodes.start..episodes.end` of the stream. Episode `e`
/// always draws from `stream.child(e)`, so splitting a range into pieces and
/// concatenating the results reproduces the whole range.
pub fn collect_range(
    task: &TaskSpec,
    params: &PolicyParams,
    episodes: Range<usize>,
    horizon: usize,
    stream: RngStream,
) -> Result<TrajectoryBatch> {
    check_policy_fits(task, params)?;
    let trajectories = episodes
        .map(|e| run_episode(task, params, horizon, stream.child(e as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryBatch {
        task: *task,
        trajectories,
        collecting_params: params.clone(),
    })
}

/// Collects `episodes` full-horizon episodes of `task` under `params`.
pub fn collect(
    task: &TaskSpec,
    params: &PolicyParams,
    episodes: usize,
    horizon: usize,
    stream: RngStream,
) -> Result<TrajectoryBatch> {
    if episodes == 0 {
        return Err(Error::Empty("collect needs at least one episode"));
    }
    if horizon == 0 {
        return Err(Error::Empty("collect needs a horizon of at least one step"));
    }
    collect_range(task, params, 0..episodes, horizon, stream)
}

/// `R_t = Σ_{k≥t} γ^{k−t} r_k` by backward recursion.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Unnormalized GAE per trajectory, bootstrapping from the value of the
/// final observation.
pub fn raw_advantages(batch: &TrajectoryBatch, vparams: &ValueParams, gamma: f64, lambda: f64) -> Result<Vec<Vec<f64>>> {
    batch
        .trajectories
        .iter()
        .map(|traj| {
            let values = predict_values(vparams, traj.observations.view())?;
            let n = traj.len();
            let mut adv = vec![0.0; n];
            let mut acc = 0.0;
            for t in (0..n).rev() {
                let delta = traj.rewards[t] + gamma * values[t + 1] - values[t];
                acc = delta + gamma * lambda * acc;
                adv[t] = acc;
            }
            Ok(adv)
        })
        .collect()
}

/// Shifts and scales all entries to mean 0 and (population) standard
/// deviation 1.
pub fn normalize_advantages(adv: &mut [Vec<f64>]) {
    let n: usize = adv.iter().map(Vec::len).sum();
    if n == 0 {
        return;
    }
    let mean = adv.iter().flatten().sum::<f64>() / n as f64;
    let var = adv.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    for a in adv.iter_mut().flatten() {
        *a = (*a - mean) * scale;
    }
}

/// GAE(γ, λ) advantages normalized across the whole batch.
pub fn advantages(batch: &TrajectoryBatch, vparams: &ValueParams, gamma: f64, lambda: f64) -> Result<Vec<Vec<f64>>> {
    let mut adv = raw_advantages(batch, vparams, gamma, lambda)?;
    normalize_advantages(&mut adv);
    Ok(adv)
}
