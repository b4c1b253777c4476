//! Meta-trains with the fast preset and prints one line per iteration.
//!
//! ```text
//! cargo run --release --example meta_train -- [iterations] [out_dir]
//! ```

use std::time::Instant;

use maml_trpo::cli::{train, Preset, RunConfig};

fn main() -> maml_trpo::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::preset(Preset::Fast);
    if let Some(n) = args.next() {
        cfg.hyper.meta_iterations = n.parse().expect("iterations must be an integer");
    }
    cfg.out_dir = args.next().unwrap_or_else(|| "runs/example_fast".into()).into();

    let start = Instant::now();
    println!("iter  loss_pre  loss_post  accepted  kl        coeff   success  secs");
    let result = train(&cfg, &mut |ev| {
        let r = &ev.output.record;
        println!(
            "{:4}  {:8.3}  {:9.3}  {:8}  {:.2e}  {:.3}   {:.3}    {:.1}",
            r.iteration,
            r.mean_loss_pre,
            r.mean_loss_post,
            r.accepted_step,
            r.kl_after_step,
            r.step_coefficient,
            r.success_train,
            start.elapsed().as_secs_f64()
        );
    })?;
    println!(
        "done: {} accepted of {}; artifacts in {}",
        result.summary.accepted_steps,
        result.summary.iterations_completed,
        cfg.out_dir.display()
    );
    Ok(())
}
