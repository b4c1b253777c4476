//! Oracle checks shared by the `oracles` and `acceptance` test targets.
//! Each returns the measured error so callers can apply the tolerance.

#![allow(dead_code)]

use maml_trpo::envs::{sample_task, Split, TaskFamily};
use maml_trpo::maml::{chain_meta_gradient, meta_gradient, meta_iteration, meta_surrogate, HyperConfig, MetaGradientMode};
use maml_trpo::numerics::{
    conjugate_gradient, evaluate, fisher_vector_product, gradient, hvp, Graph, ScalarLossFn, Value, Var,
};
use maml_trpo::policy::losses::{gaussian_log_prob, PolicyGradientLoss, Samples};
use maml_trpo::policy::{
    distribution, init_params, kl_mean, log_prob_of, predict_values, ActionDistribution, PolicyParams, PolicyShape,
    ValueShape,
};
use maml_trpo::rollout::{collect, discounted_returns, raw_advantages};
use maml_trpo::RngStream;
use ndarray::Array2;
use rand::Rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&d) / norm(b)
}

/// 3-obs / 8-hidden / 2-act policy with 20 fixed transitions.
pub fn small_pg_instance() -> (PolicyParams, Samples) {
    let mut theta = init_params(PolicyShape::with_hidden(3, 2, vec![8]), &mut RngStream::new(101).rng());
    let off = theta.shape.log_std_offset();
    theta.values[off] = -0.3;
    theta.values[off + 1] = 0.2;
    let mut rng = RngStream::new(102).rng();
    let n = 20;
    let obs = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
    let actions = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
    let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lp = vec![0.0; n];
    (theta, Samples::new(obs, actions, &adv, &lp))
}

/// Max over coordinates of `|g − fd| / max(|g|, |fd|, 1e-6)` with central
/// differences of step 1e-5.
pub fn gradient_oracle_error() -> f64 {
    let (theta, samples) = small_pg_instance();
    let loss = PolicyGradientLoss {
        shape: &theta.shape,
        samples: &samples,
    };
    let g = gradient(&loss, &theta.values).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut p = theta.values.clone();
        p[i] += h;
        let up = evaluate(&loss, &p).unwrap();
        p[i] -= 2.0 * h;
        let down = evaluate(&loss, &p).unwrap();
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-6));
    }
    worst
}

/// Worst norm-wise relative error of `H v` against central differences of
/// gradients (step 1e-4) over a few random directions.
pub fn hvp_oracle_error() -> f64 {
    let (theta, samples) = small_pg_instance();
    let loss = PolicyGradientLoss {
        shape: &theta.shape,
        samples: &samples,
    };
    let mut rng = RngStream::new(103).rng();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let v: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hv = hvp(&loss, &theta.values, &v).unwrap();
        let at = |s: f64| {
            let p: Vec<f64> = theta.values.iter().zip(&v).map(|(t, d)| t + s * d).collect();
            gradient(&loss, &p).unwrap()
        };
        let (up, down) = (at(h), at(-h));
        let fd: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        worst = worst.max(rel_diff(&hv, &fd));
    }
    worst
}

/// Sum of log-densities of fixed `(obs, action)` rows.
struct LogLikelihood<'a> {
    shape: &'a PolicyShape,
    obs: Array2<f64>,
    actions: Array2<f64>,
}

impl ScalarLossFn for LogLikelihood<'_> {
    fn build<V: Value>(&self, g: &mut Graph<V>, params: Var) -> Var {
        let obs = g.constant(self.obs.clone());
        let act = g.constant(self.actions.clone());
        let lp = gaussian_log_prob(g, self.shape, params, obs, act);
        g.sum(lp)
    }
}

/// Frobenius relative error between the Fisher assembled column by column
/// from `fisher_vector_product` and the explicit `E[∇log π ∇log πᵀ]`
/// (expectation by 3-point Gauss–Hermite quadrature, exact for the
/// degree-4 integrand) on a 14-parameter policy.
pub fn fisher_oracle_error() -> f64 {
    let mut theta = init_params(PolicyShape::with_hidden(1, 1, vec![2, 2]), &mut RngStream::new(104).rng());
    assert_eq!(theta.len(), 14);
    let off = theta.shape.log_std_offset();
    theta.values[off] = -0.4;
    let mut rng = RngStream::new(105).rng();
    let states: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let obs = Array2::from_shape_vec((states.len(), 1), states.clone()).unwrap();
    let n = theta.len();

    let nodes = [(-(3f64.sqrt()), 1.0 / 6.0), (0.0, 2.0 / 3.0), (3f64.sqrt(), 1.0 / 6.0)];
    let mut explicit = vec![0.0; n * n];
    for &s in &states {
        let dist = distribution(&theta, &[s]).unwrap();
        for &(z, w) in &nodes {
            let a = dist.mean[0] + dist.std[0] * z;
            let score = gradient(
                &LogLikelihood {
                    shape: &theta.shape,
                    obs: Array2::from_elem((1, 1), s),
                    actions: Array2::from_elem((1, 1), a),
                },
                &theta.values,
            )
            .unwrap();
            for i in 0..n {
                for j in 0..n {
                    explicit[i * n + j] += w * score[i] * score[j] / states.len() as f64;
                }
            }
        }
    }

    let mut via_fvp = vec![0.0; n * n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = fisher_vector_product(&theta, &obs, &e, 0.0).unwrap();
        for i in 0..n {
            via_fvp[i * n + j] = col[i];
        }
    }
    rel_diff(&via_fvp, &explicit)
}

fn tiny_meta_cfg() -> HyperConfig {
    HyperConfig {
        meta_batch_tasks: 2,
        episodes_per_task: 3,
        horizon: 10,
        inner_steps_train: 2,
        policy_hidden: vec![6],
        value_hidden: vec![4],
        value_fit_steps: 5,
        parallel: false,
        ..HyperConfig::default()
    }
}

/// Norm-wise relative error of the exact meta-gradient against central
/// differences (step 1e-5) of the meta-surrogate on frozen data, with two
/// inner steps per task.
pub fn meta_gradient_fd_error() -> f64 {
    let cfg = tiny_meta_cfg();
    let theta = init_params(PolicyShape::with_hidden(2, 2, vec![6]), &mut RngStream::new(106).rng());
    let v = init_params(ValueShape::with_hidden(2, vec![4]), &mut RngStream::new(107).rng());
    let out = meta_iteration(&theta, &v, &cfg, &[TaskFamily::PointReach], RngStream::new(108), 0).unwrap();
    let g = meta_gradient(&theta, &out.tasks, &cfg).unwrap();
    let h = 1e-5;
    let fd: Vec<f64> = (0..theta.len())
        .map(|i| {
            let mut p = theta.clone();
            p.values[i] += h;
            let up = meta_surrogate(&p, &out.tasks, &cfg).unwrap();
            p.values[i] -= 2.0 * h;
            let down = meta_surrogate(&p, &out.tasks, &cfg).unwrap();
            (up - down) / (2.0 * h)
        })
        .collect();
    rel_diff(&g, &fd)
}

/// `½ (θ − c)ᵀ A (θ − c)` for symmetric `A`.
struct Quadratic {
    a: Array2<f64>,
    c: Vec<f64>,
}

impl ScalarLossFn for Quadratic {
    fn build<V: Value>(&self, g: &mut Graph<V>, params: Var) -> Var {
        let n = self.c.len();
        let c = g.constant(Array2::from_shape_vec((1, n), self.c.clone()).unwrap());
        let a = g.constant(self.a.clone());
        let d = g.sub(params, c);
        let ad = g.matmul(d, a);
        let q = g.mul(ad, d);
        let s = g.sum(q);
        g.scale(s, 0.5)
    }
}

fn random_spd(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    let m = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
    m.t().dot(&m) / n as f64 + Array2::<f64>::eye(n) * 0.5
}

/// Max absolute error of the exact one-step meta-gradient on random
/// quadratics against `(I − α A_s) A_q (θ′ − c_q)`.
pub fn meta_gradient_quadratic_error() -> f64 {
    let mut rng = RngStream::new(109).rng();
    let n = 6;
    let alpha = 0.1;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let s = Quadratic {
            a: random_spd(n, &mut rng),
            c: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let q = Quadratic {
            a: random_spd(n, &mut rng),
            c: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = chain_meta_gradient(&theta, &[&s], &q, alpha, MetaGradientMode::Exact, |v: &mut [f64]| {
            vec![true; v.len()]
        })
        .unwrap();

        let th = ndarray::Array1::from(theta.clone());
        let cs = ndarray::Array1::from(s.c.clone());
        let cq = ndarray::Array1::from(q.c.clone());
        let adapted = &th - &(s.a.dot(&(&th - &cs)) * alpha);
        let gq = q.a.dot(&(&adapted - &cq));
        let jac = Array2::<f64>::eye(n) - &s.a * alpha;
        let expected = jac.dot(&gq);
        for (a, b) in got.iter().zip(expected.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn solve_dense(a: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m = a.clone();
    let mut x = b.to_vec();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[[i, k]].abs().total_cmp(&m[[j, k]].abs())).unwrap();
        for j in 0..n {
            m.swap([k, j], [p, j]);
        }
        x.swap(k, p);
        for i in k + 1..n {
            let f = m[[i, k]] / m[[k, k]];
            for j in k..n {
                m[[i, j]] -= f * m[[k, j]];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[[k, j]] * x[j]).sum();
        x[k] = (x[k] - s) / m[[k, k]];
    }
    x
}

/// Worst relative error against a direct solve and the most iterations used,
/// over ten random 20×20 SPD systems.
pub fn cg_oracle() -> (f64, usize) {
    let mut rng = RngStream::new(110).rng();
    let mut worst: f64 = 0.0;
    let mut iters = 0;
    for _ in 0..10 {
        let a = random_spd(20, &mut rng);
        let b: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sol = conjugate_gradient(|v| Ok(a.dot(&ndarray::Array1::from(v.to_vec())).to_vec()), &b, 20, 1e-12).unwrap();
        let direct = solve_dense(&a, &b);
        worst = worst.max(rel_diff(&sol.x, &direct));
        iters = iters.max(sol.iterations);
    }
    (worst, iters)
}

/// Max absolute deviation of GAE from its λ = 0 and λ = 1 closed forms and
/// from the brute-force double sum at λ = 0.9, on a real rollout batch.
pub fn gae_identity_error() -> f64 {
    let task = sample_task(TaskFamily::PointReach, Split::Train, &mut RngStream::new(111).rng());
    let theta = init_params(PolicyShape::with_hidden(2, 2, vec![8]), &mut RngStream::new(112).rng());
    let v = init_params(ValueShape::with_hidden(2, vec![8]), &mut RngStream::new(113).rng());
    let batch = collect(&task, &theta, 3, 15, RngStream::new(114)).unwrap();
    let gamma = 0.97;
    let zero = raw_advantages(&batch, &v, gamma, 0.0).unwrap();
    let one = raw_advantages(&batch, &v, gamma, 1.0).unwrap();
    let mid = raw_advantages(&batch, &v, gamma, 0.9).unwrap();
    let mut worst: f64 = 0.0;
    for (i, traj) in batch.trajectories.iter().enumerate() {
        let vals = predict_values(&v, traj.observations.view()).unwrap();
        let n = traj.len();
        let ret = discounted_returns(&traj.rewards, gamma);
        let delta: Vec<f64> = (0..n).map(|t| traj.rewards[t] + gamma * vals[t + 1] - vals[t]).collect();
        for t in 0..n {
            worst = worst.max((zero[i][t] - delta[t]).abs());
            let telescoped = ret[t] - vals[t] + gamma.powi((n - t) as i32) * vals[n];
            worst = worst.max((one[i][t] - telescoped).abs());
            let brute: f64 = (t..n).map(|l| (gamma * 0.9).powi((l - t) as i32) * delta[l]).sum();
            worst = worst.max((mid[i][t] - brute).abs());
        }
    }
    worst
}

/// Errors of: log-density of 0 under N(0, 1) against −½ log 2π; the KL of a
/// pure mean shift against `Σ δ²/(2σ²)`; and `kl_mean(p, p)` against 0.
pub fn gaussian_closed_form_errors() -> (f64, f64, f64) {
    let unit = ActionDistribution {
        mean: vec![0.0],
        std: vec![1.0],
    };
    let lp_err = (log_prob_of(&unit, &[0.0]) + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs();

    let p = init_params(PolicyShape::with_hidden(2, 2, vec![5]), &mut RngStream::new(115).rng());
    let mut p = p;
    let ls = p.shape.log_std_offset();
    p.values[ls] = 0.4;
    p.values[ls + 1] = -0.7;
    let shift = [0.3, -0.2];
    let mut q = p.clone();
    for (k, d) in shift.iter().enumerate() {
        q.values[ls - 2 + k] += d;
    }
    let mut rng = RngStream::new(116).rng();
    let obs = Array2::from_shape_fn((7, 2), |_| rng.random_range(-1.0..1.0));
    let expected: f64 = shift
        .iter()
        .zip(p.log_std())
        .map(|(d, l)| d * d / (2.0 * (2.0 * l).exp()))
        .sum();
    let kl_err = (kl_mean(&p, &q, obs.view()).unwrap() - expected).abs();
    let self_kl = kl_mean(&p, &p, obs.view()).unwrap().abs();
    (lp_err, kl_err, self_kl)
}
