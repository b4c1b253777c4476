//! The bi-level algorithm.
//!
//! One meta-iteration samples a batch of training tasks and, for each one,
//! collects a support batch under `θ`, takes vanilla policy-gradient steps
//! to get `θ′`, and collects a query batch under `θ′`. The meta-objective
//! is the importance-weighted query loss as a function of `θ` (the inner
//! update is replayed on the stored support data). Its gradient goes
//! through the inner update exactly via Hessian-vector products, and the
//! outer step is a TRPO step: natural-gradient direction from conjugate
//! gradients on the query-data Fisher, then a backtracking line search on
//! the surrogate under a mean-KL bound between old and new adapted
//! policies.

mod adapt;
mod iteration;
mod meta;
mod trpo;

pub use adapt::{adapt, adapt_from, inner_loss, inner_update, tape_log_probs, Adaptation, InnerStep};
pub use iteration::{meta_iteration, sample_tasks, IterationOutput, MetaIterationRecord, TaskAdaptation};
pub use meta::{chain_meta_gradient, meta_gradient, meta_surrogate, replay_adaptation};
pub use trpo::{task_meta_fvp, trpo_step, TrpoOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ValueFitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaGradientMode {
    /// Differentiate through the inner update (Hessian terms included).
    #[default]
    Exact,
    /// Use the query gradient at `θ′` directly.
    FirstOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperConfig {
    /// Inner-loop learning rate.
    pub alpha: f64,
    /// Trust-region radius on the mean KL between adapted policies.
    pub kl_delta: f64,
    pub meta_batch_tasks: usize,
    pub episodes_per_task: usize,
    pub horizon: usize,
    pub meta_iterations: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub inner_steps_train: usize,
    pub meta_gradient_mode: MetaGradientMode,
    pub cg_iters: usize,
    pub cg_residual_tol: f64,
    pub cg_damping: f64,
    pub line_search_shrink: f64,
    pub line_search_max_trials: usize,
    pub value_fit_steps: usize,
    pub value_learning_rate: f64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    /// Run per-task work on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl Default for HyperConfig {
    fn default() -> Self {
        HyperConfig {
            alpha: 0.1,
            kl_delta: 0.01,
            meta_batch_tasks: 20,
            episodes_per_task: 10,
            horizon: 150,
            meta_iterations: 300,
            gamma: 0.99,
            lambda: 0.97,
            inner_steps_train: 1,
            meta_gradient_mode: MetaGradientMode::Exact,
            cg_iters: 10,
            cg_residual_tol: 1e-10,
            cg_damping: 1e-5,
            line_search_shrink: 0.8,
            line_search_max_trials: 15,
            value_fit_steps: 80,
            value_learning_rate: 1e-3,
            policy_hidden: vec![100, 100],
            value_hidden: vec![32, 32],
            parallel: true,
        }
    }
}

impl HyperConfig {
    pub fn value_fit(&self) -> ValueFitConfig {
        ValueFitConfig {
            steps: self.value_fit_steps,
            learning_rate: self.value_learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be a positive finite number, got {v}")))
            }
        }
        fn at_least_one(field: &str, v: usize) -> Result<()> {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::config(field, "must be at least 1"))
            }
        }
        positive("alpha", self.alpha)?;
        positive("kl_delta", self.kl_delta)?;
        positive("cg_residual_tol", self.cg_residual_tol)?;
        positive("value_learning_rate", self.value_learning_rate)?;
        at_least_one("meta_batch_tasks", self.meta_batch_tasks)?;
        at_least_one("episodes_per_task", self.episodes_per_task)?;
        at_least_one("horizon", self.horizon)?;
        at_least_one("inner_steps_train", self.inner_steps_train)?;
        at_least_one("cg_iters", self.cg_iters)?;
        at_least_one("line_search_max_trials", self.line_search_max_trials)?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", format!("must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda", format!("must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.cg_damping >= 0.0 && self.cg_damping.is_finite()) {
            return Err(Error::config("cg_damping", "must be a non-negative finite number"));
        }
        if !(self.line_search_shrink > 0.0 && self.line_search_shrink < 1.0) {
            return Err(Error::config("line_search_shrink", "must lie in (0, 1)"));
        }
        for (field, hidden) in [("policy_hidden", &self.policy_hidden), ("value_hidden", &self.value_hidden)] {
            if hidden.is_empty() || hidden.contains(&0) {
                return Err(Error::config(field, "needs at least one layer and no zero-width layers"));
            }
        }
        Ok(())
    }
}

/// Runs `f(i)` for `i in 0..n`, on the rayon pool when `parallel`, and
/// returns results in index order.
pub(crate) fn map_indexed<T, F>(n: usize, parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if parallel {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
