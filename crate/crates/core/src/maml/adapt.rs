use ndarray::Array2;

use super::HyperConfig;
use crate::envs::TaskSpec;
use crate::error::{Error, Result};
use crate::numerics::{evaluate, value_and_gradient, Graph};
use crate::policy::losses::{gaussian_log_prob, PolicyGradientLoss, Samples};
use crate::policy::{PolicyParams, ValueParams};
use crate::rng::{tag, RngStream};
use crate::rollout::{advantages, collect, TrajectoryBatch};

/// One inner gradient step: the parameters it started from, the support
/// batch and its flattened samples (normalized advantages), and the clamp
/// mask of the update.
#[derive(Debug, Clone)]
pub struct InnerStep {
    pub params: PolicyParams,
    pub batch: TrajectoryBatch,
    pub samples: Samples,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Adaptation {
    pub adapted: PolicyParams,
    pub steps: Vec<InnerStep>,
    /// Inner loss of the starting parameters on the first support batch.
    /// `None` when no step was taken.
    pub loss_pre: Option<f64>,
}

/// Vanilla policy-gradient loss of `params` on `samples`.
pub fn inner_loss(params: &PolicyParams, samples: &Samples) -> Result<f64> {
    evaluate(
        &PolicyGradientLoss {
            shape: &params.shape,
            samples,
        },
        &params.values,
    )
}

/// `θ − α g`, followed by the log-std clamp. Returns the new parameters and
/// the clamp mask (`false` where a coordinate was clamped).
pub fn inner_update(params: &PolicyParams, grad: &[f64], alpha: f64) -> Result<(PolicyParams, Vec<bool>)> {
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "inner update gradient",
            expected: params.len(),
            found: grad.len(),
        });
    }
    let values = params.values.iter().zip(grad).map(|(t, g)| t - alpha * g).collect();
    let mut next = params.with_values(values)?;
    let mask = next.clamp_log_std();
    if !next.is_finite() {
        return Err(Error::NonFinite { op: "inner update" });
    }
    Ok((next, mask))
}

/// `(N, 1)` log-probabilities of the samples' actions under `params`,
/// evaluated on the tape. Using these as the "old" log-probabilities makes
/// importance ratios at `params` exactly one.
pub fn tape_log_probs(params: &PolicyParams, samples: &Samples) -> Array2<f64> {
    let mut g = Graph::<Array2<f64>>::new();
    let p = g.constant(Array2::from_shape_vec((1, params.len()), params.values.clone()).expect("row"));
    let obs = g.constant(samples.obs.clone());
    let act = g.constant(samples.actions.clone());
    let lp = gaussian_log_prob(&mut g, &params.shape, p, obs, act);
    g.value(lp).clone()
}

/// `steps` inner policy-gradient steps on `task` from `theta`. Support
/// batch `k` is drawn from `stream.child(SUPPORT).child(k)` under the
/// current parameters.
pub fn adapt(
    theta: &PolicyParams,
    task: &TaskSpec,
    steps: usize,
    cfg: &HyperConfig,
    vparams: &ValueParams,
    stream: RngStream,
) -> Result<Adaptation> {
    adapt_from(theta, task, steps, cfg, vparams, stream, None)
}

/// Like [`adapt`], but reuses `first_support` (collected under `theta`) as
/// the first support batch when given.
pub fn adapt_from(
    theta: &PolicyParams,
    task: &TaskSpec,
    steps: usize,
    cfg: &HyperConfig,
    vparams: &ValueParams,
    stream: RngStream,
    first_support: Option<TrajectoryBatch>,
) -> Result<Adaptation> {
    let mut params = theta.clone();
    let mut out = Vec::with_capacity(steps);
    let mut loss_pre = None;
    let mut first_support = first_support;
    for k in 0..steps {
        let batch = match first_support.take() {
            Some(b) if k == 0 => b,
            _ => collect(
                task,
                &params,
                cfg.episodes_per_task,
                cfg.horizon,
                stream.child(tag::SUPPORT).child(k as u64),
            )?,
        };
        let adv = advantages(&batch, vparams, cfg.gamma, cfg.lambda)?;
        let samples = batch.samples(&adv);
        let (loss, grad) = value_and_gradient(
            &PolicyGradientLoss {
                shape: &params.shape,
                samples: &samples,
            },
            &params.values,
        )?;
        if k == 0 {
            loss_pre = Some(loss);
        }
        let (next, mask) = inner_update(&params, &grad, cfg.alpha)?;
        out.push(InnerStep {
            params: std::mem::replace(&mut params, next),
            batch,
            samples,
            mask,
        });
    }
    Ok(Adaptation {
        adapted: params,
        steps: out,
        loss_pre,
    })
}
