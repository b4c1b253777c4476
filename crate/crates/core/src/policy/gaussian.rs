use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_dim, mlp_forward, mlp_forward_batch, PolicyParams, LOG_STD_MAX, LOG_STD_MIN};
use crate::error::{Error, Result};

/// `½ log 2π`
pub(crate) const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian over actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ActionDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn distribution(params: &PolicyParams, obs: &[f64]) -> Result<ActionDistribution> {
    check_dim("policy observation", params.shape.obs_dim, obs.len())?;
    let mean = mlp_forward(params, obs);
    let std = params
        .log_std()
        .iter()
        .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp())
        .collect();
    Ok(ActionDistribution { mean, std })
}

pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> (Vec<f64>, f64) {
    let action: Vec<f64> = dist
        .mean
        .iter()
        .zip(&dist.std)
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s * z
        })
        .collect();
    let lp = log_prob_of(dist, &action);
    (action, lp)
}

pub fn log_prob_of(dist: &ActionDistribution, action: &[f64]) -> f64 {
    debug_assert_eq!(dist.dim(), action.len());
    dist.mean
        .iter()
        .zip(&dist.std)
        .zip(action)
        .map(|((m, s), a)| {
            let d = a - m;
            -d * d / (2.0 * s * s) - s.ln() - HALF_LOG_2PI
        })
        .sum()
}

/// Mean over `obs` rows of `KL(π_p(·|s) ‖ π_q(·|s))`.
pub fn kl_mean(p: &PolicyParams, q: &PolicyParams, obs: ArrayView2<'_, f64>) -> Result<f64> {
    if p.shape != q.shape {
        return Err(Error::DimensionMismatch {
            context: "kl_mean parameter count",
            expected: p.len(),
            found: q.len(),
        });
    }
    if obs.nrows() == 0 {
        return Err(Error::Empty("kl_mean observation batch"));
    }
    check_dim("kl_mean observation", p.shape.obs_dim, obs.ncols())?;
    let mp = mlp_forward_batch(p, obs);
    let mq = mlp_forward_batch(q, obs);
    let ls_p: Vec<f64> = p.log_std().iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
    let ls_q: Vec<f64> = q.log_std().iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
    let mut total = 0.0;
    for (rp, rq) in mp.rows().into_iter().zip(mq.rows()) {
        for d in 0..ls_p.len() {
            let var_p = (2.0 * ls_p[d]).exp();
            let var_q = (2.0 * ls_q[d]).exp();
            let dm = rp[d] - rq[d];
            total += ls_q[d] - ls_p[d] + (var_p + dm * dm) / (2.0 * var_q) - 0.5;
        }
    }
    Ok(total / obs.nrows() as f64)
}
