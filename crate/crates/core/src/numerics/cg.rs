use crate::error::{Error, Result};

use super::{axpy, dot, norm};

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    /// `‖b - A x_k‖` after each iteration, starting with `‖b‖`.
    pub residual_history: Vec<f64>,
}

/// Solves `A x = b` for symmetric positive-definite `A` given as a
/// matrix-free operator.
///
/// Uses the conjugate-residual variant of conjugate gradients: each iterate
/// minimizes `‖b - A x‖` over the current Krylov subspace, so the residual
/// norm never increases. It needs one operator application per iteration,
/// like plain CG. Stops when `‖r‖ <= residual_tol * ‖b‖` or after
/// `max_iters` iterations.
pub fn conjugate_gradient<A>(mut apply: A, b: &[f64], max_iters: usize, residual_tol: f64) -> Result<CgSolution>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    let mut history = vec![b_norm];
    if b_norm == 0.0 || max_iters == 0 {
        return Ok(CgSolution {
            x,
            residual_norm: b_norm,
            iterations: 0,
            residual_history: history,
        });
    }

    let mut r = b.to_vec();
    let mut ar = apply(&r)?;
    if ar.len() != n {
        return Err(Error::DimensionMismatch {
            context: "linear operator output",
            expected: n,
            found: ar.len(),
        });
    }
    let mut p = r.clone();
    let mut ap = ar.clone();
    let mut r_ar = dot(&r, &ar);
    let mut residual_norm = b_norm;
    let mut iterations = 0;

    while iterations < max_iters {
        let ap_ap = dot(&ap, &ap);
        if ap_ap <= 0.0 || !r_ar.is_finite() || r_ar <= 0.0 {
            break;
        }
        let step = r_ar / ap_ap;
        axpy(step, &p, &mut x);
        axpy(-step, &ap, &mut r);
        iterations += 1;
        residual_norm = norm(&r);
        history.push(residual_norm);
        if residual_norm <= residual_tol * b_norm {
            break;
        }

        ar = apply(&r)?;
        let r_ar_next = dot(&r, &ar);
        let beta = r_ar_next / r_ar;
        r_ar = r_ar_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
            ap[i] = ar[i] + beta * ap[i];
        }
    }

    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "conjugate_gradient" });
    }
    Ok(CgSolution {
        x,
        residual_norm,
        iterations,
        residual_history: history,
    })
}
