//! Task families standing in for a manipulation benchmark.
//!
//! Three families, each a pure state-in/state-out transformer:
//!
//! - `point_reach`: move a point agent to a hidden goal.
//! - `point_push`: push an object to a hidden goal; the object only moves
//!   while the agent is in contact with it.
//! - `hinge`: a 1-D hand must reach the handle of a hinge (at `0.5 * angle`)
//!   and then drive the angle to its target. Train tasks open the hinge,
//!   test tasks close it.
//!
//! Goals never appear in observations: the only task signal available to a
//! policy is the reward, so any task-specific behaviour has to come from
//! adaptation.
//!
//! Point-family goals lie on the annulus `0.5 <= |goal| <= 1.0`; train goals
//! are in the right half-plane and test goals in the left half-plane.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-component action bound applied before the dynamics.
pub const ACTION_LIMIT: f64 = 0.1;
/// Distance (or angle error) below which a step counts as successful.
pub const SUCCESS_THRESHOLD: f64 = 0.05;
/// Agent/object or hand/handle distance below which contact happens.
pub const CONTACT_RADIUS: f64 = 0.1;
/// Angle change per unit of hand motion while in contact. The handle sits at
/// `0.5 * angle`, so a gain of 2 keeps the handle attached to the hand.
pub const HINGE_GAIN: f64 = 2.0;
/// Position of the object at the start of every `point_push` episode.
pub const PUSH_OBJECT_START: [f64; 2] = [0.25, 0.0];
/// Hinge angle at reset.
pub const HINGE_START_ANGLE: f64 = FRAC_PI_4;
/// Half-width of the square the point agent starts in.
pub const START_SPREAD: f64 = 0.1;

const GOAL_RADIUS_MIN: f64 = 0.5;
const GOAL_RADIUS_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    PointReach,
    PointPush,
    Hinge,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 3] = [TaskFamily::PointReach, TaskFamily::PointPush, TaskFamily::Hinge];

    pub fn obs_dim(self) -> usize {
        match self {
            TaskFamily::PointReach => 2,
            TaskFamily::PointPush => 4,
            TaskFamily::Hinge => 2,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            TaskFamily::PointReach | TaskFamily::PointPush => 2,
            TaskFamily::Hinge => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::PointReach => "point_reach",
            TaskFamily::PointPush => "point_push",
            TaskFamily::Hinge => "hinge",
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "families",
                    format!("unknown task family `{s}` (expected point_reach, point_push or hinge)"),
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::config("split", format!("unknown split `{s}` (expected train or test)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    /// World-space goal for the point families.
    Position([f64; 2]),
    /// Target hinge angle in radians.
    Angle(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: TaskFamily,
    pub goal: Goal,
    /// `+1` opens the hinge (train), `-1` closes it (test). Always `+1` for
    /// the point families.
    pub direction_sign: i8,
    pub split: Split,
}

impl TaskSpec {
    pub fn obs_dim(&self) -> usize {
        self.family.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.family.act_dim()
    }

    fn goal_position(&self) -> [f64; 2] {
        match self.goal {
            Goal::Position(g) => g,
            Goal::Angle(_) => unreachable!("hinge task has no goal position"),
        }
    }

    fn target_angle(&self) -> f64 {
        match self.goal {
            Goal::Angle(a) => a,
            Goal::Position(_) => unreachable!("point task has no target angle"),
        }
    }
}

/// Draws a task uniformly from the legal region of `(family, split)`.
pub fn sample_task<R: Rng + ?Sized>(family: TaskFamily, split: Split, rng: &mut R) -> TaskSpec {
    match family {
        TaskFamily::Hinge => {
            let (sign, target) = match split {
                Split::Train => (1, FRAC_PI_2),
                Split::Test => (-1, 0.0),
            };
            TaskSpec {
                family,
                goal: Goal::Angle(target),
                direction_sign: sign,
                split,
            }
        }
        TaskFamily::PointReach | TaskFamily::PointPush => {
            // Uniform in area: r^2 is uniform on [r_min^2, r_max^2].
            let r2 = rng.random_range(GOAL_RADIUS_MIN.powi(2)..=GOAL_RADIUS_MAX.powi(2));
            let radius = r2.sqrt();
            let angle = match split {
                Split::Train => rng.random_range(-FRAC_PI_2..=FRAC_PI_2),
                Split::Test => loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break FRAC_PI_2 + PI * u;
                    }
                },
            };
            let goal = [radius * angle.cos(), radius * angle.sin()];
            TaskSpec {
                family,
                goal: Goal::Position(goal),
                direction_sign: 1,
                split,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Body {
    Reach { pos: [f64; 2] },
    Push { agent: [f64; 2], object: [f64; 2] },
    Hinge { hand: f64, angle: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub t: usize,
    pub horizon: usize,
    pub body: Body,
}

impl EnvState {
    pub fn observation(&self) -> Vec<f64> {
        match self.body {
            Body::Reach { pos } => pos.to_vec(),
            Body::Push { agent, object } => vec![agent[0], agent[1], object[0], object[1]],
            Body::Hinge { hand, angle } => vec![hand, angle],
        }
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.horizon
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

pub fn reset<R: Rng + ?Sized>(task: &TaskSpec, horizon: usize, rng: &mut R) -> (EnvState, Vec<f64>) {
    let mut start = || {
        [
            rng.random_range(-START_SPREAD..=START_SPREAD),
            rng.random_range(-START_SPREAD..=START_SPREAD),
        ]
    };
    let body = match task.family {
        TaskFamily::PointReach => Body::Reach { pos: start() },
        TaskFamily::PointPush => Body::Push {
            agent: start(),
            object: PUSH_OBJECT_START,
        },
        TaskFamily::Hinge => Body::Hinge {
            hand: 0.0,
            angle: HINGE_START_ANGLE,
        },
    };
    let state = EnvState { t: 0, horizon, body };
    let obs = state.observation();
    (state, obs)
}

fn clip(a: f64) -> f64 {
    a.clamp(-ACTION_LIMIT, ACTION_LIMIT)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn step(state: &EnvState, task: &TaskSpec, action: &[f64]) -> Result<Transition> {
    if action.len() != task.act_dim() {
        return Err(Error::DimensionMismatch {
            context: "env step action",
            expected: task.act_dim(),
            found: action.len(),
        });
    }
    if state.is_done() {
        return Err(Error::EpisodeFinished {
            t: state.t,
            horizon: state.horizon,
        });
    }

    let (body, reward, success) = match state.body {
        Body::Reach { pos } => {
            let pos = [pos[0] + clip(action[0]), pos[1] + clip(action[1])];
            let d = dist(pos, task.goal_position());
            (Body::Reach { pos }, -d, d < SUCCESS_THRESHOLD)
        }
        Body::Push { agent, object } => {
            let da = [clip(action[0]), clip(action[1])];
            let agent = [agent[0] + da[0], agent[1] + da[1]];
            let object = if dist(agent, object) < CONTACT_RADIUS {
                [object[0] + da[0], object[1] + da[1]]
            } else {
                object
            };
            let d = dist(object, task.goal_position());
            let reward = -d - 0.5 * dist(agent, object);
            (Body::Push { agent, object }, reward, d < SUCCESS_THRESHOLD)
        }
        Body::Hinge { hand, angle } => {
            let da = clip(action[0]);
            let hand = hand + da;
            let angle = if (hand - 0.5 * angle).abs() < CONTACT_RADIUS {
                (angle + HINGE_GAIN * da).clamp(0.0, FRAC_PI_2)
            } else {
                angle
            };
            let err = (angle - task.target_angle()).abs();
            (Body::Hinge { hand, angle }, -err, err < SUCCESS_THRESHOLD)
        }
    };

    let next = EnvState {
        t: state.t + 1,
        horizon: state.horizon,
        body,
    };
    Ok(Transition {
        observation: next.observation(),
        done: next.t == next.horizon,
        state: next,
        reward,
        success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn reach_task(goal: [f64; 2]) -> TaskSpec {
        TaskSpec {
            family: TaskFamily::PointReach,
            goal: Goal::Position(goal),
            direction_sign: 1,
            split: Split::Train,
        }
    }

    #[test]
    fn hinge_test_split_closes() {
        let mut rng = RngStream::new(3).rng();
        let task = sample_task(TaskFamily::Hinge, Split::Test, &mut rng);
        assert_eq!(task.direction_sign, -1);
        assert_eq!(task.goal, Goal::Angle(0.0));
        let task = sample_task(TaskFamily::Hinge, Split::Train, &mut rng);
        assert_eq!(task.direction_sign, 1);
    }

    #[test]
    fn point_goals_respect_split_regions() {
        let mut rng = RngStream::new(7).rng();
        for split in [Split::Train, Split::Test] {
            for _ in 0..2000 {
                let task = sample_task(TaskFamily::PointReach, split, &mut rng);
                let g = task.goal_position();
                let r = g[0].hypot(g[1]);
                assert!((0.5..=1.0 + 1e-12).contains(&r), "radius {r}");
                match split {
                    Split::Train => assert!(g[0] >= -1e-12),
                    Split::Test => assert!(g[0] <= 1e-12),
                }
            }
        }
    }

    #[test]
    fn train_goal_angles_center_on_zero() {
        let mut rng = RngStream::new(0).rng();
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| {
                let g = sample_task(TaskFamily::PointReach, Split::Train, &mut rng).goal_position();
                g[1].atan2(g[0])
            })
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 0.05, "mean angle {mean}");
    }

    #[test]
    fn hinge_reset_is_fixed() {
        let task = sample_task(TaskFamily::Hinge, Split::Train, &mut RngStream::new(1).rng());
        let (state, obs) = reset(&task, 10, &mut RngStream::new(1).rng());
        assert_eq!(obs, vec![0.0, FRAC_PI_4]);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn reach_reset_in_start_square_and_deterministic() {
        let task = reach_task([0.6, 0.0]);
        for seed in 0..50 {
            let (s1, o1) = reset(&task, 5, &mut RngStream::new(seed).rng());
            let (s2, _) = reset(&task, 5, &mut RngStream::new(seed).rng());
            assert_eq!(s1, s2);
            assert!(o1.iter().all(|x| x.abs() <= START_SPREAD));
        }
    }

    #[test]
    fn reach_step_clips_action() {
        let task = reach_task([0.6, 0.0]);
        let state = EnvState {
            t: 0,
            horizon: 10,
            body: Body::Reach { pos: [0.0, 0.0] },
        };
        let tr = step(&state, &task, &[0.2, 0.0]).unwrap();
        assert_eq!(tr.observation, vec![0.1, 0.0]);
        assert!((tr.reward + 0.5).abs() < 1e-15);
        assert!(!tr.success);
        assert!(!tr.done);
    }

    #[test]
    fn hinge_on_target_is_success() {
        let task = sample_task(TaskFamily::Hinge, Split::Train, &mut RngStream::new(0).rng());
        let state = EnvState {
            t: 0,
            horizon: 3,
            body: Body::Hinge {
                hand: -1.0,
                angle: FRAC_PI_2,
            },
        };
        let tr = step(&state, &task, &[0.0]).unwrap();
        assert_eq!(tr.reward, 0.0);
        assert!(tr.success);
    }

    #[test]
    fn hinge_handle_follows_hand_in_contact() {
        let task = sample_task(TaskFamily::Hinge, Split::Train, &mut RngStream::new(0).rng());
        let mut state = EnvState {
            t: 0,
            horizon: 20,
            body: Body::Hinge {
                hand: 0.5 * HINGE_START_ANGLE - 0.15,
                angle: HINGE_START_ANGLE,
            },
        };
        let mut success = false;
        for _ in 0..12 {
            let tr = step(&state, &task, &[0.1]).unwrap();
            success |= tr.success;
            state = tr.state;
        }
        assert!(success, "pushing forward from contact should open the hinge");
    }

    #[test]
    fn push_object_static_without_contact() {
        let task = TaskSpec {
            family: TaskFamily::PointPush,
            goal: Goal::Position([0.8, 0.0]),
            direction_sign: 1,
            split: Split::Train,
        };
        let state = EnvState {
            t: 0,
            horizon: 10,
            body: Body::Push {
                agent: [-0.5, 0.5],
                object: [0.25, 0.0],
            },
        };
        let tr = step(&state, &task, &[0.1, -0.1]).unwrap();
        assert_eq!(&tr.observation[2..], &[0.25, 0.0]);
    }

    #[test]
    fn push_moves_object_in_contact() {
        let task = TaskSpec {
            family: TaskFamily::PointPush,
            goal: Goal::Position([0.8, 0.0]),
            direction_sign: 1,
            split: Split::Train,
        };
        let state = EnvState {
            t: 0,
            horizon: 10,
            body: Body::Push {
                agent: [0.2, 0.0],
                object: [0.25, 0.0],
            },
        };
        let tr = step(&state, &task, &[0.05, 0.0]).unwrap();
        assert!((tr.observation[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn contract_violations() {
        let task = reach_task([0.6, 0.0]);
        let (state, _) = reset(&task, 1, &mut RngStream::new(0).rng());
        assert!(matches!(
            step(&state, &task, &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let tr = step(&state, &task, &[0.0, 0.0]).unwrap();
        assert!(tr.done);
        assert!(matches!(
            step(&tr.state, &task, &[0.0, 0.0]),
            Err(Error::EpisodeFinished { .. })
        ));
    }

    #[test]
    fn family_names_round_trip() {
        for f in TaskFamily::ALL {
            assert_eq!(f.name().parse::<TaskFamily>().unwrap(), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.name()));
        }
        assert!("door".parse::<TaskFamily>().is_err());
    }
}
