use serde::{Deserialize, Serialize};

use super::iteration::TaskAdaptation;
use super::meta::surrogate_terms;
use super::adapt::InnerStep;
use super::{map_indexed, HyperConfig, MetaGradientMode};
use crate::error::{Error, Result};
use crate::numerics::{conjugate_gradient, dot, fisher_vector_product, hvp};
use crate::policy::losses::PolicyGradientLoss;
use crate::policy::{kl_mean, PolicyParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrpoOutcome {
    pub theta: PolicyParams,
    pub accepted: bool,
    /// Mean KL between old and new adapted policies at the returned
    /// parameters (0 when rejected).
    pub kl: f64,
    /// Backtracking coefficient of the accepted step (0 when rejected).
    pub step_coefficient: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub cg_residual: f64,
    pub cg_iterations: usize,
    /// Why the step was rejected, if it was.
    pub note: Option<String>,
}

impl TrpoOutcome {
    fn rejected(theta: &PolicyParams, surrogate: f64, cg_residual: f64, cg_iterations: usize, note: &str) -> Self {
        TrpoOutcome {
            theta: theta.clone(),
            accepted: false,
            kl: 0.0,
            step_coefficient: 0.0,
            surrogate_before: surrogate,
            surrogate_after: surrogate,
            cg_residual,
            cg_iterations,
            note: Some(note.to_string()),
        }
    }
}

/// `Jᵀ F J v` for one task, where `F` is the Fisher of the adapted policy
/// on the query observations and `J = ∂θ′/∂θ` is the Jacobian of the inner
/// updates. This is the Hessian at `θ` of the mean KL the line search
/// measures. In first-order mode `J` keeps only the clamp masks.
pub fn task_meta_fvp(task: &TaskAdaptation, v: &[f64], cfg: &HyperConfig) -> Result<Vec<f64>> {
    let exact = cfg.meta_gradient_mode == MetaGradientMode::Exact;
    let support_hvp = |step: &InnerStep, u: &[f64]| {
        hvp(
            &PolicyGradientLoss {
                shape: &step.params.shape,
                samples: &step.samples,
            },
            &step.params.values,
            u,
        )
    };
    let mut u = v.to_vec();
    for step in &task.support {
        if exact {
            let hu = support_hvp(step, &u)?;
            u.iter_mut().zip(&hu).for_each(|(x, h)| *x -= cfg.alpha * h);
        }
        u.iter_mut().zip(&step.mask).filter(|(_, keep)| !**keep).for_each(|(x, _)| *x = 0.0);
    }
    let mut w = fisher_vector_product(&task.adapted, &task.query_samples.obs, &u, 0.0)?;
    for step in task.support.iter().rev() {
        w.iter_mut().zip(&step.mask).filter(|(_, keep)| !**keep).for_each(|(x, _)| *x = 0.0);
        if exact {
            let hw = support_hvp(step, &w)?;
            w.iter_mut().zip(&hw).for_each(|(x, h)| *x -= cfg.alpha * h);
        }
    }
    Ok(w)
}

/// Task mean of `op(task, v)`, plus `damping · v`.
fn averaged<F>(tasks: &[TaskAdaptation], v: &[f64], cfg: &HyperConfig, op: F) -> Result<Vec<f64>>
where
    F: Fn(&TaskAdaptation, &[f64]) -> Result<Vec<f64>> + Sync + Send,
{
    let per_task = map_indexed(tasks.len(), cfg.parallel, |i| op(&tasks[i], v))?;
    let n = tasks.len() as f64;
    let mut out: Vec<f64> = v.iter().map(|x| cfg.cg_damping * x).collect();
    for fv in &per_task {
        for (o, f) in out.iter_mut().zip(fv) {
            *o += f / n;
        }
    }
    Ok(out)
}

/// Fisher of the adapted policy on the task's query observations.
fn adapted_fvp(task: &TaskAdaptation, v: &[f64]) -> Result<Vec<f64>> {
    fisher_vector_product(&task.adapted, &task.query_samples.obs, v, 0.0)
}

/// Surrogate and mean KL (old adapted vs re-adapted) at `candidate`.
fn evaluate_candidate(candidate: &PolicyParams, tasks: &[TaskAdaptation], cfg: &HyperConfig) -> Result<(f64, f64)> {
    let terms = surrogate_terms(candidate, tasks, cfg)?;
    let n = tasks.len() as f64;
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    for (task, (s, adapted)) in tasks.iter().zip(&terms) {
        surrogate += s;
        kl += kl_mean(&task.adapted, adapted, task.query_samples.obs.view())?;
    }
    Ok((surrogate / n, kl / n))
}

/// One trust-region step on the meta-surrogate from `theta` along the
/// meta-gradient `grad`.
///
/// The direction solves `F x = g` by conjugate gradients, with `F` the
/// task-averaged Fisher of the adapted policies on their query observations
/// (plus damping). The full step is `√(2δ / xᵀGx) · x`, where `G` is the
/// task-averaged [`task_meta_fvp`] operator: the curvature of the KL the
/// line search measures, including the inner-update Jacobian. The line
/// search shrinks the step geometrically until the surrogate decreases and
/// the mean KL stays within `kl_delta`. If no trial qualifies, `theta`
/// comes back unchanged.
pub fn trpo_step(
    theta: &PolicyParams,
    grad: &[f64],
    tasks: &[TaskAdaptation],
    cfg: &HyperConfig,
) -> Result<TrpoOutcome> {
    if tasks.is_empty() {
        return Err(Error::Empty("trpo_step task batch"));
    }
    if grad.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            context: "trpo_step gradient",
            expected: theta.len(),
            found: grad.len(),
        });
    }
    let surrogate_before = surrogate_terms(theta, tasks, cfg)?.iter().map(|t| t.0).sum::<f64>() / tasks.len() as f64;
    if !surrogate_before.is_finite() {
        return Err(Error::NonFinite { op: "meta-surrogate" });
    }
    if grad.iter().all(|g| *g == 0.0) {
        return Ok(TrpoOutcome::rejected(theta, surrogate_before, 0.0, 0, "zero meta-gradient"));
    }

    let sol = conjugate_gradient(
        |v| averaged(tasks, v, cfg, adapted_fvp),
        grad,
        cfg.cg_iters,
        cfg.cg_residual_tol,
    )?;
    let gx = averaged(tasks, &sol.x, cfg, |t, v| task_meta_fvp(t, v, cfg))?;
    let xfx = dot(&sol.x, &gx);
    if !xfx.is_finite() {
        return Err(Error::NonFinite { op: "natural-gradient curvature" });
    }
    if xfx <= 0.0 {
        return Ok(TrpoOutcome::rejected(
            theta,
            surrogate_before,
            sol.residual_norm,
            sol.iterations,
            "non-positive curvature along the natural-gradient direction",
        ));
    }
    let scale = (2.0 * cfg.kl_delta / xfx).sqrt();

    let mut coefficient = 1.0;
    for _ in 0..cfg.line_search_max_trials {
        let values = theta
            .values
            .iter()
            .zip(&sol.x)
            .map(|(t, x)| t - coefficient * scale * x)
            .collect();
        let mut candidate = theta.with_values(values)?;
        candidate.clamp_log_std();
        let (surrogate, kl) = evaluate_candidate(&candidate, tasks, cfg)?;
        if surrogate.is_finite() && kl.is_finite() && surrogate < surrogate_before && kl <= cfg.kl_delta {
            return Ok(TrpoOutcome {
                theta: candidate,
                accepted: true,
                kl,
                step_coefficient: coefficient,
                surrogate_before,
                surrogate_after: surrogate,
                cg_residual: sol.residual_norm,
                cg_iterations: sol.iterations,
                note: None,
            });
        }
        coefficient *= cfg.line_search_shrink;
    }
    Ok(TrpoOutcome::rejected(
        theta,
        surrogate_before,
        sol.residual_norm,
        sol.iterations,
        "line search found no improving step within the trust region",
    ))
}
