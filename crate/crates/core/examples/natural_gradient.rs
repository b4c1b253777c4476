//! Solves `F x = g` for a policy's Fisher matrix with conjugate gradients
//! and prints the residual after each iteration.
//!
//! ```text
//! cargo run --release --example natural_gradient
//! ```

use maml_trpo::numerics::{conjugate_gradient, fisher_vector_product};
use maml_trpo::policy::{init_params, PolicyShape};
use maml_trpo::RngStream;
use ndarray::Array2;
use rand::Rng;

fn main() -> maml_trpo::Result<()> {
    let theta = init_params(PolicyShape::with_hidden(2, 2, vec![16, 16]), &mut RngStream::new(3).rng());
    let mut rng = RngStream::new(4).rng();
    let obs = Array2::from_shape_fn((200, 2), |_| rng.random_range(-1.0..1.0));
    let g: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let damping = 1e-3;

    let sol = conjugate_gradient(|v| fisher_vector_product(&theta, &obs, v, damping), &g, 50, 1e-10)?;
    for (k, r) in sol.residual_history.iter().enumerate() {
        println!("iter {k:3}  residual {r:.3e}");
    }
    let fx = fisher_vector_product(&theta, &obs, &sol.x, damping)?;
    let xfx: f64 = sol.x.iter().zip(&fx).map(|(a, b)| a * b).sum();
    let delta = 0.01;
    println!(
        "{} parameters, {} iterations; step scale for KL {delta}: {:.4}",
        theta.len(),
        sol.iterations,
        (2.0 * delta / xfx).sqrt()
    );
    Ok(())
}
