//! Model-agnostic meta-learning with a trust-region outer loop.
//!
//! The crate learns a Gaussian MLP policy initialization that adapts to a
//! new task after one (or a few) vanilla policy-gradient steps. Tasks come
//! from small deterministic continuous-control families in [`envs`]; the
//! outer update in [`maml`] differentiates through the inner step with
//! exact Hessian-vector products from [`numerics`] and is constrained by a
//! mean-KL trust region.
//!
//! Module map:
//!
//! - [`envs`]: task families, task sampling, `reset` / `step`.
//! - [`policy`]: flat parameter vectors, the Gaussian policy and the value
//!   baseline.
//! - [`rollout`]: trajectory collection, discounted returns and GAE.
//! - [`numerics`]: matrix-level reverse-mode differentiation, HVPs,
//!   Fisher-vector products and the conjugate-gradient solver.
//! - [`maml`]: inner adaptation, meta-surrogate, meta-gradient, TRPO step.
//! - [`eval`]: k-step adaptation curves, split reports, baseline comparison.
//! - [`cli`]: run configuration, presets, CSV/JSON artifacts and the
//!   `train` / `eval` / `adapt-curve` drivers.

pub mod cli;
pub mod envs;
pub mod error;
pub mod eval;
pub mod maml;
pub mod numerics;
pub mod policy;
pub mod rng;
pub mod rollout;

pub use error::{Error, Result};
pub use rng::RngStream;
