//! Gaussian MLP policy and MLP value baseline over flat parameter vectors.
//!
//! Layout of a flat vector: for each layer, the `fan_in x fan_out` weight
//! matrix in row-major order followed by the `fan_out` bias; policies then
//! append one log standard deviation per action dimension. Inputs multiply
//! from the left (`h = x W + b`), hidden layers use `tanh`, outputs are
//! linear.

mod gaussian;
pub mod losses;
mod value;

pub use gaussian::{distribution, kl_mean, log_prob_of, sample_action, ActionDistribution};
pub use value::{fit_value, predict_value, predict_values, ValueFit, ValueFitConfig};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

pub trait NetShape: Clone + PartialEq + std::fmt::Debug {
    /// `(fan_in, fan_out)` for each dense layer, input to output.
    fn layers(&self) -> Vec<(usize, usize)>;
    /// Trailing free parameters after the last layer.
    fn extra_params(&self) -> usize {
        0
    }
    fn input_dim(&self) -> usize {
        self.layers()[0].0
    }
    fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum::<usize>() + self.extra_params()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
}

impl PolicyShape {
    pub const DEFAULT_HIDDEN: [usize; 2] = [100, 100];

    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        Self::with_hidden(obs_dim, act_dim, Self::DEFAULT_HIDDEN.to_vec())
    }

    pub fn with_hidden(obs_dim: usize, act_dim: usize, hidden: Vec<usize>) -> Self {
        PolicyShape {
            obs_dim,
            act_dim,
            hidden,
        }
    }

    pub fn log_std_offset(&self) -> usize {
        self.param_count() - self.act_dim
    }
}

fn mlp_layers(input: usize, hidden: &[usize], output: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims.windows(2).map(|w| (w[0], w[1])).collect()
}

impl NetShape for PolicyShape {
    fn layers(&self) -> Vec<(usize, usize)> {
        mlp_layers(self.obs_dim, &self.hidden, self.act_dim)
    }
    fn extra_params(&self) -> usize {
        self.act_dim
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueShape {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
}

impl ValueShape {
    pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

    pub fn new(obs_dim: usize) -> Self {
        Self::with_hidden(obs_dim, Self::DEFAULT_HIDDEN.to_vec())
    }

    pub fn with_hidden(obs_dim: usize, hidden: Vec<usize>) -> Self {
        ValueShape { obs_dim, hidden }
    }
}

impl NetShape for ValueShape {
    fn layers(&self) -> Vec<(usize, usize)> {
        mlp_layers(self.obs_dim, &self.hidden, 1)
    }
}

/// Flat parameters together with the shape that interprets them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector<S> {
    pub shape: S,
    pub values: Vec<f64>,
}

pub type PolicyParams = ParamVector<PolicyShape>;
pub type ValueParams = ParamVector<ValueShape>;

impl<S: NetShape> ParamVector<S> {
    pub fn from_values(shape: S, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.param_count() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: shape.param_count(),
                found: values.len(),
            });
        }
        Ok(ParamVector { shape, values })
    }

    pub fn zeros(shape: S) -> Self {
        let n = shape.param_count();
        ParamVector {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Same shape, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(self.shape.clone(), values)
    }

    /// Weight matrix and bias of dense layer `i`.
    pub fn layer(&self, i: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let layers = self.shape.layers();
        let offset: usize = layers[..i].iter().map(|(a, b)| a * b + b).sum();
        let (fan_in, fan_out) = layers[i];
        let w = ArrayView2::from_shape((fan_in, fan_out), &self.values[offset..offset + fan_in * fan_out])
            .expect("layer view");
        let b_start = offset + fan_in * fan_out;
        let b = ArrayView1::from(&self.values[b_start..b_start + fan_out]);
        (w, b)
    }

    /// Rebuilds a flat vector from per-layer weights/biases and the trailing
    /// extra parameters.
    pub fn from_layers(shape: S, layers: &[(Array2<f64>, Array1<f64>)], extra: &[f64]) -> Result<Self> {
        let mut values = Vec::with_capacity(shape.param_count());
        for (w, b) in layers {
            values.extend(w.iter().copied());
            values.extend(b.iter().copied());
        }
        values.extend_from_slice(extra);
        Self::from_values(shape, values)
    }

    /// Xavier-uniform weights, zero biases, zero extra parameters.
    pub fn init<R: Rng + ?Sized>(shape: S, rng: &mut R) -> Self {
        let mut values = Vec::with_capacity(shape.param_count());
        for (fan_in, fan_out) in shape.layers() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)));
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        values.extend(std::iter::repeat_n(0.0, shape.extra_params()));
        ParamVector { shape, values }
    }
}

pub fn init_params<S: NetShape, R: Rng + ?Sized>(shape: S, rng: &mut R) -> ParamVector<S> {
    ParamVector::init(shape, rng)
}

impl ParamVector<PolicyShape> {
    pub fn log_std(&self) -> &[f64] {
        &self.values[self.shape.log_std_offset()..]
    }

    /// Clamps log-std entries into `[LOG_STD_MIN, LOG_STD_MAX]`. Returns a
    /// mask that is `false` where clamping changed the value.
    pub fn clamp_log_std(&mut self) -> Vec<bool> {
        let offset = self.shape.log_std_offset();
        let mut mask = vec![true; self.values.len()];
        for (i, v) in self.values[offset..].iter_mut().enumerate() {
            let c = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
            if c != *v {
                *v = c;
                mask[offset + i] = false;
            }
        }
        mask
    }
}

/// Single-input forward pass: tanh hidden layers, linear output.
pub fn mlp_forward<S: NetShape>(params: &ParamVector<S>, x: &[f64]) -> Vec<f64> {
    let layers = params.shape.layers();
    let last = layers.len() - 1;
    let mut h = x.to_vec();
    let mut offset = 0;
    for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
        let w = &params.values[offset..offset + fan_in * fan_out];
        let b = &params.values[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        let mut out = b.to_vec();
        for (i, &hi) in h.iter().enumerate() {
            let row = &w[i * fan_out..(i + 1) * fan_out];
            for (o, &wij) in out.iter_mut().zip(row) {
                *o += hi * wij;
            }
        }
        if l != last {
            out.iter_mut().for_each(|v| *v = crate::numerics::tanh(*v));
        }
        h = out;
        offset += fan_in * fan_out + fan_out;
    }
    h
}

/// Batched forward pass over the rows of `x`.
pub fn mlp_forward_batch<S: NetShape>(params: &ParamVector<S>, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n_layers = params.shape.layers().len();
    let mut h = x.to_owned();
    for l in 0..n_layers {
        let (w, b) = params.layer(l);
        h = h.dot(&w) + b;
        if l + 1 != n_layers {
            h.mapv_inplace(crate::numerics::tanh);
        }
    }
    h
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
