use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{check_dim, mlp_forward, mlp_forward_batch, NetShape, ValueParams};
use crate::error::{Error, Result};
use crate::rollout::{discounted_returns, TrajectoryBatch};

pub fn predict_value(vparams: &ValueParams, obs: &[f64]) -> Result<f64> {
    check_dim("value observation", vparams.shape.obs_dim, obs.len())?;
    Ok(mlp_forward(vparams, obs)[0])
}

/// Predictions for every row of `obs`.
pub fn predict_values(vparams: &ValueParams, obs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    check_dim("value observation", vparams.shape.obs_dim, obs.ncols())?;
    Ok(mlp_forward_batch(vparams, obs).into_raw_vec_and_offset().0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueFitConfig {
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for ValueFitConfig {
    fn default() -> Self {
        ValueFitConfig {
            steps: 80,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValueFit {
    pub params: ValueParams,
    /// MSE before each Adam step, then the final MSE.
    pub mse_history: Vec<f64>,
}

impl ValueFit {
    pub fn initial_mse(&self) -> f64 {
        self.mse_history[0]
    }

    pub fn final_mse(&self) -> f64 {
        *self.mse_history.last().expect("non-empty history")
    }
}

/// Mean squared error of the value net against `(N, 1)` targets and its
/// gradient, by a direct backward pass. Agrees with the tape version of
/// [`super::losses::ValueRegression`] to rounding.
pub fn mse_and_gradient(vparams: &ValueParams, obs: &Array2<f64>, targets: &Array2<f64>) -> (f64, Vec<f64>) {
    let layers = vparams.shape.layers();
    let n_layers = layers.len();
    let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (w, b) = vparams.layer(l);
        let input = if l == 0 { obs.view() } else { hidden[l - 1].view() };
        let mut z = input.dot(&w);
        z += &b;
        if l + 1 != n_layers {
            z.mapv_inplace(crate::numerics::tanh);
        }
        hidden.push(z);
    }
    let n = obs.nrows() as f64;
    let mut delta = hidden.pop().expect("output layer") - targets;
    let mse = delta.iter().map(|d| d * d).sum::<f64>() / n;
    delta *= 2.0 / n;

    let mut grad = vec![0.0; vparams.len()];
    let mut offset = vparams.len() - vparams.shape.extra_params();
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out) = layers[l];
        offset -= fan_in * fan_out + fan_out;
        let input = if l == 0 { obs.view() } else { hidden[l - 1].view() };
        let gw = input.t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        grad[offset..offset + fan_in * fan_out].iter_mut().zip(gw.iter()).for_each(|(g, x)| *g = *x);
        grad[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out]
            .iter_mut()
            .zip(gb.iter())
            .for_each(|(g, x)| *g = *x);
        if l > 0 {
            let (w, _) = vparams.layer(l);
            let mut d = delta.dot(&w.t());
            Zip::from(&mut d).and(&hidden[l - 1]).for_each(|d, h| *d *= 1.0 - h * h);
            delta = d;
        }
    }
    (mse, grad)
}

fn mse(vparams: &ValueParams, obs: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let pred = mlp_forward_batch(vparams, obs.view());
    Zip::from(&pred).and(targets).fold(0.0, |acc, p, t| acc + (p - t) * (p - t)) / obs.nrows() as f64
}

/// Full-batch Adam regression of the value net onto `targets`.
///
/// Never returns parameters with a larger MSE than the starting point.
pub fn fit_value_to_targets(
    vparams: &ValueParams,
    obs: &Array2<f64>,
    targets: &[f64],
    cfg: &ValueFitConfig,
) -> Result<ValueFit> {
    if targets.is_empty() {
        return Err(Error::Empty("value regression targets"));
    }
    check_dim("value regression targets", obs.nrows(), targets.len())?;
    let targets = Array2::from_shape_vec((targets.len(), 1), targets.to_vec()).expect("column");

    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    let n = vparams.len();
    let mut current = vparams.clone();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut history = Vec::with_capacity(cfg.steps + 1);
    for step in 1..=cfg.steps {
        let (loss, grad) = mse_and_gradient(&current, obs, &targets);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: "value regression" });
        }
        history.push(loss);
        let bc1 = 1.0 - BETA1.powi(step as i32);
        let bc2 = 1.0 - BETA2.powi(step as i32);
        for i in 0..n {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            current.values[i] -= cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
        }
    }
    let final_mse = mse(&current, obs, &targets);
    history.push(final_mse);

    if final_mse > history[0] {
        let initial = history[0];
        history.push(initial);
        return Ok(ValueFit {
            params: vparams.clone(),
            mse_history: history,
        });
    }
    Ok(ValueFit {
        params: current,
        mse_history: history,
    })
}

/// Regresses the value net onto discounted returns of every step in
/// `batches`, pooled.
pub fn fit_value(vparams: &ValueParams, batches: &[TrajectoryBatch], gamma: f64, cfg: &ValueFitConfig) -> Result<ValueFit> {
    let obs_dim = vparams.shape.obs_dim;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for traj in batches.iter().flat_map(|b| &b.trajectories) {
        targets.extend(discounted_returns(&traj.rewards, gamma));
        let steps = traj.len();
        check_dim("value observation", obs_dim, traj.observations.ncols())?;
        rows.extend(traj.observations.slice(ndarray::s![..steps, ..]).iter().copied());
    }
    if targets.is_empty() {
        return Err(Error::Empty("value fit batch"));
    }
    let obs = Array2::from_shape_vec((targets.len(), obs_dim), rows).expect("pooled observations");
    fit_value_to_targets(vparams, &obs, &targets, cfg)
}
