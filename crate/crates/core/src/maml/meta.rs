use super::adapt::{inner_update, InnerStep};
use super::iteration::TaskAdaptation;
use super::{map_indexed, HyperConfig, MetaGradientMode};
use crate::error::{Error, Result};
use crate::numerics::{evaluate, gradient, hvp, ScalarLossFn};
use crate::policy::losses::{ImportanceSurrogate, PolicyGradientLoss};
use crate::policy::PolicyParams;

/// Reruns the inner updates from `theta` on the stored support samples.
/// Returns `θ_0 = theta, θ_1, …, θ_K` and the clamp mask of each update.
pub fn replay_adaptation(
    theta: &PolicyParams,
    steps: &[InnerStep],
    alpha: f64,
) -> Result<(Vec<PolicyParams>, Vec<Vec<bool>>)> {
    let mut thetas = vec![theta.clone()];
    let mut masks = Vec::with_capacity(steps.len());
    for step in steps {
        let cur = thetas.last().expect("non-empty");
        let grad = gradient(
            &PolicyGradientLoss {
                shape: &cur.shape,
                samples: &step.samples,
            },
            &cur.values,
        )?;
        let (next, mask) = inner_update(cur, &grad, alpha)?;
        thetas.push(next);
        masks.push(mask);
    }
    Ok((thetas, masks))
}

/// Gradient of `θ ↦ Q(θ_K)` where `θ_{k+1} = P(θ_k − α ∇S_k(θ_k))` and `P`
/// is the projection `project`, which returns a mask that is `false` on
/// coordinates it pinned (those get zero derivative).
///
/// In [`MetaGradientMode::Exact`] the backward pass applies
/// `(I − α ∇²S_k(θ_k))` through each step. In first-order mode it only
/// applies the projection masks.
pub fn chain_meta_gradient<S, Q, P>(
    theta: &[f64],
    supports: &[S],
    query: &Q,
    alpha: f64,
    mode: MetaGradientMode,
    project: P,
) -> Result<Vec<f64>>
where
    S: ScalarLossFn,
    Q: ScalarLossFn,
    P: Fn(&mut [f64]) -> Vec<bool>,
{
    let mut points = vec![theta.to_vec()];
    let mut masks = Vec::with_capacity(supports.len());
    for s in supports {
        let cur = points.last().expect("non-empty");
        let g = gradient(s, cur)?;
        let mut next: Vec<f64> = cur.iter().zip(&g).map(|(t, gi)| t - alpha * gi).collect();
        masks.push(project(&mut next));
        points.push(next);
    }
    let mut v = gradient(query, points.last().expect("non-empty"))?;
    for (k, s) in supports.iter().enumerate().rev() {
        for (vi, keep) in v.iter_mut().zip(&masks[k]) {
            if !keep {
                *vi = 0.0;
            }
        }
        if mode == MetaGradientMode::Exact {
            let hv = hvp(s, &points[k], &v)?;
            for (vi, h) in v.iter_mut().zip(&hv) {
                *vi -= alpha * h;
            }
        }
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "meta-gradient" });
    }
    Ok(v)
}

fn task_surrogate(theta: &PolicyParams, task: &TaskAdaptation, alpha: f64) -> Result<(f64, PolicyParams)> {
    let (mut thetas, _) = replay_adaptation(theta, &task.support, alpha)?;
    let adapted = thetas.pop().expect("non-empty");
    let s = evaluate(
        &ImportanceSurrogate {
            shape: &adapted.shape,
            samples: &task.query_samples,
        },
        &adapted.values,
    )?;
    Ok((s, adapted))
}

/// Per-task surrogate values and re-adapted parameters at `theta`.
pub(crate) fn surrogate_terms(
    theta: &PolicyParams,
    tasks: &[TaskAdaptation],
    cfg: &HyperConfig,
) -> Result<Vec<(f64, PolicyParams)>> {
    map_indexed(tasks.len(), cfg.parallel, |i| task_surrogate(theta, &tasks[i], cfg.alpha))
}

/// Mean over tasks of the importance-weighted query loss at `θ′(theta)`.
pub fn meta_surrogate(theta: &PolicyParams, tasks: &[TaskAdaptation], cfg: &HyperConfig) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Empty("meta_surrogate task batch"));
    }
    let terms = surrogate_terms(theta, tasks, cfg)?;
    Ok(terms.iter().map(|t| t.0).sum::<f64>() / tasks.len() as f64)
}

fn clamp_projection(theta: &PolicyParams) -> impl Fn(&mut [f64]) -> Vec<bool> + '_ {
    move |values: &mut [f64]| {
        let mut p = theta.with_values(values.to_vec()).expect("same length");
        let mask = p.clamp_log_std();
        values.copy_from_slice(&p.values);
        mask
    }
}

/// Gradient of [`meta_surrogate`] at `theta`, averaged over tasks.
pub fn meta_gradient(theta: &PolicyParams, tasks: &[TaskAdaptation], cfg: &HyperConfig) -> Result<Vec<f64>> {
    if tasks.is_empty() {
        return Err(Error::Empty("meta_gradient task batch"));
    }
    let per_task = map_indexed(tasks.len(), cfg.parallel, |i| {
        let task = &tasks[i];
        let supports: Vec<_> = task
            .support
            .iter()
            .map(|s| PolicyGradientLoss {
                shape: &theta.shape,
                samples: &s.samples,
            })
            .collect();
        let query = ImportanceSurrogate {
            shape: &theta.shape,
            samples: &task.query_samples,
        };
        chain_meta_gradient(
            &theta.values,
            &supports,
            &query,
            cfg.alpha,
            cfg.meta_gradient_mode,
            clamp_projection(theta),
        )
    })?;
    let mut mean = vec![0.0; theta.len()];
    for g in &per_task {
        for (m, gi) in mean.iter_mut().zip(g) {
            *m += gi;
        }
    }
    let n = tasks.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}
