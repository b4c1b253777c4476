//! Policy and value losses recorded on a differentiation tape.

use ndarray::Array2;

use super::gaussian::HALF_LOG_2PI;
use super::{NetShape, PolicyShape, ValueShape};
use crate::numerics::{Graph, ScalarLossFn, Value, Var};

/// Forward pass of a flat-parameter MLP on a batch `x` (rows = samples).
pub fn mlp<V: Value, S: NetShape>(g: &mut Graph<V>, shape: &S, params: Var, x: Var) -> Var {
    let layers = shape.layers();
    let mut h = x;
    let mut offset = 0;
    for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
        let w = g.slice(params, offset, fan_in, fan_out);
        let b = g.slice(params, offset + fan_in * fan_out, 1, fan_out);
        let z = g.matmul(h, w);
        h = g.add(z, b);
        if l + 1 != layers.len() {
            h = g.tanh(h);
        }
        offset += fan_in * fan_out + fan_out;
    }
    h
}

/// Policy log-std as a `(1, act_dim)` node.
pub fn log_std<V: Value>(g: &mut Graph<V>, shape: &PolicyShape, params: Var) -> Var {
    g.slice(params, shape.log_std_offset(), 1, shape.act_dim)
}

/// `(N, 1)` log-densities of `actions` under the policy at `obs`.
pub fn gaussian_log_prob<V: Value>(
    g: &mut Graph<V>,
    shape: &PolicyShape,
    params: Var,
    obs: Var,
    actions: Var,
) -> Var {
    let mean = mlp(g, shape, params, obs);
    let ls = log_std(g, shape, params);
    let neg_ls = g.neg(ls);
    let inv_std = g.exp(neg_ls);
    let diff = g.sub(actions, mean);
    let z = g.mul(diff, inv_std);
    let z2 = g.square(z);
    let quad = g.sum_rows(z2);
    let half_quad = g.scale(quad, -0.5);
    let ls_sum = g.sum(ls);
    let norm = g.scalar(HALF_LOG_2PI * shape.act_dim as f64);
    let c = g.add(ls_sum, norm);
    g.sub(half_quad, c)
}

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}

/// Flattened on-policy samples: one row per environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    /// `(N, 1)` advantage estimates.
    pub advantages: Array2<f64>,
    /// `(N, 1)` log-probabilities under the collecting policy.
    pub log_probs: Array2<f64>,
}

impl Samples {
    pub fn new(obs: Array2<f64>, actions: Array2<f64>, advantages: &[f64], log_probs: &[f64]) -> Self {
        debug_assert_eq!(obs.nrows(), actions.nrows());
        debug_assert_eq!(obs.nrows(), advantages.len());
        Samples {
            obs,
            actions,
            advantages: column(advantages),
            log_probs: column(log_probs),
        }
    }

    pub fn len(&self) -> usize {
        self.obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.nrows() == 0
    }
}

/// Vanilla policy-gradient loss `-mean(log π(a|s) · A)`.
pub struct PolicyGradientLoss<'a> {
    pub shape: &'a PolicyShape,
    pub samples: &'a Samples,
}

impl ScalarLossFn for PolicyGradientLoss<'_> {
    fn build<V: Value>(&self, g: &mut Graph<V>, params: Var) -> Var {
        let obs = g.constant(self.samples.obs.clone());
        let act = g.constant(self.samples.actions.clone());
        let adv = g.constant(self.samples.advantages.clone());
        let lp = gaussian_log_prob(g, self.shape, params, obs, act);
        let weighted = g.mul(lp, adv);
        let m = g.mean(weighted);
        g.neg(m)
    }
}

/// Importance-weighted loss `-mean(exp(log π(a|s) - log π_old(a|s)) · A)`.
pub struct ImportanceSurrogate<'a> {
    pub shape: &'a PolicyShape,
    pub samples: &'a Samples,
}

impl ScalarLossFn for ImportanceSurrogate<'_> {
    fn build<V: Value>(&self, g: &mut Graph<V>, params: Var) -> Var {
        let obs = g.constant(self.samples.obs.clone());
        let act = g.constant(self.samples.actions.clone());
        let adv = g.constant(self.samples.advantages.clone());
        let old = g.constant(self.samples.log_probs.clone());
        let lp = gaussian_log_prob(g, self.shape, params, obs, act);
        let log_ratio = g.sub(lp, old);
        let ratio = g.exp(log_ratio);
        let weighted = g.mul(ratio, adv);
        let m = g.mean(weighted);
        g.neg(m)
    }
}

/// `θ ↦ mean_s KL(π_fixed(·|s) ‖ π_θ(·|s))` with the first argument frozen.
pub struct KlFromFixed<'a> {
    pub shape: &'a PolicyShape,
    pub obs: &'a Array2<f64>,
    /// `(N, act_dim)` means of the frozen policy.
    pub fixed_mean: Array2<f64>,
    /// `(1, act_dim)` log-stds of the frozen policy.
    pub fixed_log_std: Array2<f64>,
}

impl ScalarLossFn for KlFromFixed<'_> {
    fn build<V: Value>(&self, g: &mut Graph<V>, params: Var) -> Var {
        let obs = g.constant(self.obs.clone());
        let mean_q = mlp(g, self.shape, params, obs);
        let ls_q = log_std(g, self.shape, params);
        let mean_p = g.constant(self.fixed_mean.clone());
        let ls_p = g.constant(self.fixed_log_std.clone());
        let var_p = g.constant(self.fixed_log_std.mapv(|l| (2.0 * l).exp()));

        // log σq − log σp + (σp² + (μp − μq)²) / (2σq²) − ½, summed over dims.
        let log_ratio = g.sub(ls_q, ls_p);
        let diff = g.sub(mean_p, mean_q);
        let diff2 = g.square(diff);
        let num = g.add(diff2, var_p);
        let neg2 = g.scale(ls_q, -2.0);
        let inv_var_q = g.exp(neg2);
        let frac = g.mul(num, inv_var_q);
        let half_frac = g.scale(frac, 0.5);
        let per_dim = g.add(half_frac, log_ratio);
        let per_sample = g.sum_rows(per_dim);
        let m = g.mean(per_sample);
        let half = g.scalar(0.5 * self.shape.act_dim as f64);
        g.sub(m, half)
    }
}

/// Mean squared error of the value net against fixed targets.
pub struct ValueRegression<'a> {
    pub shape: &'a ValueShape,
    pub obs: &'a Array2<f64>,
    /// `(N, 1)` regression targets.
    pub targets: &'a Array2<f64>,
}

impl ScalarLossFn for ValueRegression<'_> {
    fn build<V: Value>(&self, g: &mut Graph<V>, params: Var) -> Var {
        let obs = g.constant(self.obs.clone());
        let y = g.constant(self.targets.clone());
        let pred = mlp(g, self.shape, params, obs);
        let err = g.sub(pred, y);
        let sq = g.square(err);
        g.mean(sq)
    }
}
