//! Rolls a hand-written controller through one task of every family and
//! split, printing the goal, final observation, return and success.
//!
//! ```text
//! cargo run --release --example env_tour
//! ```

use maml_trpo::envs::{reset, sample_task, step, Goal, Split, TaskFamily, ACTION_LIMIT};
use maml_trpo::RngStream;

const HORIZON: usize = 50;

/// Moves straight at the goal (point families) or pushes the hand along the
/// hinge direction.
fn controller(family: TaskFamily, goal: Goal, sign: i8, obs: &[f64]) -> Vec<f64> {
    match (family, goal) {
        (TaskFamily::Hinge, _) => vec![f64::from(sign) * ACTION_LIMIT],
        (_, Goal::Position(g)) => {
            let (x, y) = if family == TaskFamily::PointPush { (obs[2], obs[3]) } else { (obs[0], obs[1]) };
            vec![g[0] - x, g[1] - y]
        }
        (_, Goal::Angle(_)) => unreachable!("point families have positional goals"),
    }
}

fn main() -> maml_trpo::Result<()> {
    let root = RngStream::new(7);
    for (i, family) in TaskFamily::ALL.into_iter().enumerate() {
        for split in [Split::Train, Split::Test] {
            let mut rng = root.child(i as u64).child(split as u64).rng();
            let task = sample_task(family, split, &mut rng);
            let (mut state, mut obs) = reset(&task, HORIZON, &mut rng);
            let mut ret = 0.0;
            let mut success = false;
            while !state.is_done() {
                let action = controller(family, task.goal, task.direction_sign, &obs);
                let tr = step(&state, &task, &action)?;
                ret += tr.reward;
                success |= tr.success;
                state = tr.state;
                obs = tr.observation;
            }
            println!(
                "{:<11} {:<5} goal {:<28} final obs {:<36} return {:8.3}  success {}",
                family.name(),
                split.name(),
                format!("{:?}", task.goal),
                format!("{obs:.3?}"),
                ret,
                success
            );
        }
    }
    Ok(())
}
