//! Compares a meta-trained checkpoint with the untrained initialization on
//! the same tasks, after one inner step each.
//!
//! ```text
//! cargo run --release --example meta_train -- 100 runs/example_fast
//! cargo run --release --example baseline_comparison -- runs/example_fast/checkpoint.json
//! ```

use maml_trpo::cli::{Checkpoint, Preset, RunConfig};
use maml_trpo::envs::Split;
use maml_trpo::eval::{compare_baseline, StreamSharing};

fn main() -> maml_trpo::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "runs/example_fast/checkpoint.json".into());
    let cfg = RunConfig::preset(Preset::Fast);
    let ckpt = Checkpoint::read(path.as_ref())?;
    ckpt.check_families(&cfg.families)?;

    for split in [Split::Train, Split::Test] {
        let cmp = compare_baseline(
            &ckpt.policy,
            &ckpt.value,
            &cfg.families,
            split,
            50,
            cfg.hyper.inner_steps_train,
            &cfg.hyper,
            cfg.seed,
            StreamSharing::Shared,
        )?;
        println!(
            "{:<5} meta: success {:.3} return {:8.3} | untrained: success {:.3} return {:8.3} | mean paired difference {:+.3}",
            split.name(),
            cmp.meta.success_rate,
            cmp.meta.mean_return,
            cmp.baseline.success_rate,
            cmp.baseline.mean_return,
            cmp.mean_difference
        );
    }
    Ok(())
}
