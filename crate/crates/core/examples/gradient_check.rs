//! Checks the tape's gradient and Hessian-vector product of the
//! policy-gradient loss against central finite differences.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use maml_trpo::numerics::{evaluate, gradient, hvp};
use maml_trpo::policy::losses::{PolicyGradientLoss, Samples};
use maml_trpo::policy::{init_params, PolicyShape};
use maml_trpo::RngStream;
use ndarray::Array2;
use rand::Rng;

fn main() -> maml_trpo::Result<()> {
    let theta = init_params(PolicyShape::with_hidden(3, 2, vec![8]), &mut RngStream::new(1).rng());
    let mut rng = RngStream::new(2).rng();
    let n = 20;
    let obs = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
    let actions = Array2::from_shape_fn((n, 2), |_| rng.random_range(-0.5..0.5));
    let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let samples = Samples::new(obs, actions, &adv, &vec![0.0; n]);
    let loss = PolicyGradientLoss {
        shape: &theta.shape,
        samples: &samples,
    };

    let g = gradient(&loss, &theta.values)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut p = theta.values.clone();
        p[i] += h;
        let up = evaluate(&loss, &p)?;
        p[i] -= 2.0 * h;
        let down = evaluate(&loss, &p)?;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / fd.abs().max(1e-6));
    }
    println!("gradient: {} coordinates, max relative error {worst:.2e}", theta.len());

    let v: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let hv = hvp(&loss, &theta.values, &v)?;
    let h = 1e-4;
    let shifted = |s: f64| -> maml_trpo::Result<Vec<f64>> {
        let p: Vec<f64> = theta.values.iter().zip(&v).map(|(t, d)| t + s * d).collect();
        gradient(&loss, &p)
    };
    let (up, down) = (shifted(h)?, shifted(-h)?);
    let fd: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let err = hv.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    println!("hessian-vector product: relative error {:.2e}", err / scale);
    Ok(())
}
