use ndarray::{Array2, Zip};

use super::graph::{Dual, Graph};
use crate::error::{Error, Result};
use crate::policy::losses::mlp;
use crate::policy::PolicyParams;

fn row(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape")
}

/// `F v + damping · v`, where `F` is the Fisher information of the Gaussian
/// policy averaged over the rows of `obs` (equivalently, the Hessian at
/// `params` of the mean KL from the frozen policy).
///
/// For a diagonal Gaussian the Fisher splits into `Jᵀ diag(σ⁻²) J / N` on the
/// mean-network weights, with `J` the Jacobian of the means, and `2 I` on the
/// log-stds. `J v` comes from a forward tangent pass and `Jᵀ u` from one
/// reverse pass.
pub fn fisher_vector_product(params: &PolicyParams, obs: &Array2<f64>, v: &[f64], damping: f64) -> Result<Vec<f64>> {
    if obs.nrows() == 0 {
        return Err(Error::Empty("fisher_vector_product observation batch"));
    }
    if obs.ncols() != params.shape.obs_dim {
        return Err(Error::DimensionMismatch {
            context: "fisher_vector_product observation",
            expected: params.shape.obs_dim,
            found: obs.ncols(),
        });
    }
    if v.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "fisher_vector_product direction",
            expected: params.len(),
            found: v.len(),
        });
    }

    let mut fwd = Graph::<Dual>::new();
    let p = fwd.input(Dual::new(row(&params.values), row(v)));
    let x = fwd.constant(obs.clone());
    let mean = mlp(&mut fwd, &params.shape, p, x);
    if let Some(op) = fwd.non_finite_op() {
        return Err(Error::NonFinite { op });
    }
    let mut u = fwd.value(mean).tangent_or_zero();
    let n = obs.nrows() as f64;
    let inv_var = params.log_std().iter().map(|l| (-2.0 * l).exp() / n).collect::<Vec<_>>();
    Zip::from(u.rows_mut()).for_each(|mut r| {
        r.iter_mut().zip(&inv_var).for_each(|(x, w)| *x *= w);
    });

    let mut rev = Graph::<Array2<f64>>::new();
    let p = rev.input(row(&params.values));
    let x = rev.constant(obs.clone());
    let mean = mlp(&mut rev, &params.shape, p, x);
    let weights = rev.constant(u);
    let inner = rev.mul(mean, weights);
    let out = rev.sum(inner);
    let mut fv = rev.backward(out, p).into_raw_vec_and_offset().0;

    let off = params.shape.log_std_offset();
    for (o, vi) in fv[off..].iter_mut().zip(&v[off..]) {
        *o = 2.0 * vi;
    }
    if damping != 0.0 {
        for (o, vi) in fv.iter_mut().zip(v) {
            *o += damping * vi;
        }
    }
    if fv.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "fisher-vector product" });
    }
    Ok(fv)
}
