//! Adapts a policy to one PointReach task with a few inner
//! policy-gradient steps and prints the return after each step.
//!
//! Without an argument the policy is the fast preset's untrained
//! initialization; pass a checkpoint written by `train` to adapt a
//! meta-trained policy instead.
//!
//! ```text
//! cargo run --release --example single_task_adaptation -- [checkpoint.json]
//! ```

use maml_trpo::cli::{initial_params, Checkpoint, Preset, RunConfig};
use maml_trpo::envs::{sample_task, Split, TaskFamily};
use maml_trpo::eval::adaptation_curve;
use maml_trpo::RngStream;

fn main() -> maml_trpo::Result<()> {
    let cfg = RunConfig::preset(Preset::Fast);
    let (theta, vparams) = match std::env::args().nth(1) {
        Some(path) => {
            let ckpt = Checkpoint::read(path.as_ref())?;
            ckpt.check_families(&cfg.families)?;
            (ckpt.policy, ckpt.value)
        }
        None => initial_params(&cfg),
    };

    let task = sample_task(TaskFamily::PointReach, Split::Train, &mut RngStream::new(11).rng());
    println!("task goal {:?}", task.goal);
    let curve = adaptation_curve(&theta, &vparams, &task, 5, &cfg.hyper, RngStream::new(12))?;
    for (k, (r, s)) in curve.returns_per_step.iter().zip(&curve.success_per_step).enumerate() {
        println!("after {k} steps: mean return {r:8.3}  success {s:.2}");
    }
    Ok(())
}
