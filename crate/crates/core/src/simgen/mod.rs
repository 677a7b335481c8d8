//! Synthetic multi-robot episodes with controlled time-dependent mistakes.
//!
//! Robots move between a depot and two objects (a lion and a ball) in the
//! unit square. The propositions `Lion`/`Ball` fire when any robot is within
//! the vicinity radius of the object; per-step labels follow from the task's
//! LTL formula, and the stand-in video features are a fixed random tanh
//! embedding of the geometric state.

mod dataset;
mod features;
mod plan;
mod sim;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ltl::{self, Formula, LtlError};
use crate::numerics::NumericsError;

pub use dataset::{
    derive_rng, generate_dataset, generate_episode, generate_episodes, Dataset, DatasetManifest, EpisodeRecord,
    GeneratorConfig, LabelRecord, LoadedEpisode, Prompts, Split, MANIFEST_FILE,
};
pub use features::{encode_features, raw_state, FeatureEncoder};
pub use plan::{plan_episode, Plan, PlanConfig, RobotPlan, Waypoint};
pub use sim::{label_steps, simulate, Trajectory};

pub type Point = [f64; 2];

pub const LION: &str = "Lion";
pub const BALL: &str = "Ball";
pub const DEFAULT_VICINITY_RADIUS: f64 = 0.12;
pub const LAYOUT_COUNT: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mistake {mistake} cannot occur in a {task} task")]
    IncompatibleMistake { task: Task, mistake: MistakeKind },
    #[error("schedule needs {needed} steps but the horizon is {horizon}")]
    Infeasible { needed: usize, horizon: usize },
    #[error("layout {0} does not exist (0..{LAYOUT_COUNT})")]
    UnknownLayout(usize),
    #[error("state has {actual} values, encoder expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Ltl(#[from] LtlError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Mutex,
    Ordering,
}

impl Task {
    pub fn formula_text(self) -> &'static str {
        match self {
            Task::Mutex => ltl::MUTEX_FORMULA,
            Task::Ordering => ltl::ORDER_FORMULA,
        }
    }

    pub fn formula(self) -> Formula {
        ltl::parse_ltl(self.formula_text()).expect("built-in formula parses")
    }

    pub fn task_prompt(self) -> &'static str {
        match self {
            Task::Mutex => "robot NOT IN lion AND green ball",
            Task::Ordering => "robot NOT IN lion UNTIL in green ball",
        }
    }

    pub fn mistake_prompt(self) -> &'static str {
        match self {
            Task::Mutex => "robot IN lion AND green ball",
            Task::Ordering => "robot IN lion BEFORE green ball",
        }
    }

    pub fn default_mistake(self) -> MistakeKind {
        match self {
            Task::Mutex => MistakeKind::MutexOverlap,
            Task::Ordering => MistakeKind::LionFirst,
        }
    }

    pub fn check_mistake(self, mistake: MistakeKind) -> Result<(), SimError> {
        if mistake == self.default_mistake() {
            Ok(())
        } else {
            Err(SimError::IncompatibleMistake {
                task: self,
                mistake,
            })
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Mutex => "mutex",
            Task::Ordering => "ordering",
        })
    }
}

impl FromStr for Task {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mutex" => Ok(Task::Mutex),
            "ordering" => Ok(Task::Ordering),
            other => Err(SimError::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MistakeKind {
    /// Two robots inside the lion and ball vicinities at the same time.
    MutexOverlap,
    /// A robot reaches the lion before any robot has reached the ball.
    LionFirst,
}

impl fmt::Display for MistakeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MistakeKind::MutexOverlap => "mutex_overlap",
            MistakeKind::LionFirst => "lion_first",
        })
    }
}

impl FromStr for MistakeKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mutex_overlap" => Ok(MistakeKind::MutexOverlap),
            "lion_first" => Ok(MistakeKind::LionFirst),
            other => Err(SimError::Config(format!("unknown mistake `{other}`"))),
        }
    }
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Distance from `p` to the segment `a`–`b`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return distance(p, a);
    }
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    distance(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

/// Object sites inside the unit-square workspace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub lion: Point,
    pub ball: Point,
    pub depot: Point,
    pub vicinity_radius: f64,
}

impl Arena {
    pub fn layout(index: usize) -> Result<Self, SimError> {
        Self::layout_with_radius(index, DEFAULT_VICINITY_RADIUS)
    }

    pub fn layout_with_radius(index: usize, vicinity_radius: f64) -> Result<Self, SimError> {
        let (lion, ball, depot) = match index {
            0 => ([0.2, 0.75], [0.8, 0.75], [0.5, 0.12]),
            1 => ([0.75, 0.2], [0.75, 0.8], [0.12, 0.5]),
            2 => ([0.15, 0.45], [0.55, 0.15], [0.85, 0.85]),
            other => return Err(SimError::UnknownLayout(other)),
        };
        let arena = Self {
            lion,
            ball,
            depot,
            vicinity_radius,
        };
        arena.validate()?;
        Ok(arena)
    }

    pub fn sites(&self) -> [Point; 3] {
        [self.lion, self.ball, self.depot]
    }

    /// Sites inside the square, positive radius, and every pair of sites
    /// (and the straight route between them) clear of the third site by more
    /// than twice the radius.
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.vicinity_radius > 0.0) {
            return Err(SimError::Config("vicinity radius must be positive".into()));
        }
        let sites = self.sites();
        if sites
            .iter()
            .any(|p| !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]))
        {
            return Err(SimError::Config("site outside the unit square".into()));
        }
        let clearance = 2.0 * self.vicinity_radius;
        for i in 0..3 {
            for j in (i + 1)..3 {
                if distance(sites[i], sites[j]) <= clearance {
                    return Err(SimError::Config(format!("sites {i} and {j} overlap")));
                }
                let k = 3 - i - j;
                if segment_distance(sites[k], sites[i], sites[j]) <= clearance {
                    return Err(SimError::Config(format!(
                        "route between sites {i} and {j} passes site {k}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn near_lion(&self, p: Point) -> bool {
        distance(p, self.lion) < self.vicinity_radius
    }

    pub fn near_ball(&self, p: Point) -> bool {
        distance(p, self.ball) < self.vicinity_radius
    }

    /// `Lion`/`Ball` truth values for one step of robot positions.
    pub fn propositions(&self, positions: &[Point]) -> ltl::PropositionState {
        ltl::PropositionState::from_pairs([
            (LION, positions.iter().any(|&p| self.near_lion(p))),
            (BALL, positions.iter().any(|&p| self.near_ball(p))),
        ])
    }
}

/// One simulated run, summarised at one step per 16-frame segment.
#[derive(Clone, Debug)]
pub struct Episode {
    pub id: String,
    pub task: Task,
    pub layout: usize,
    pub num_robots: usize,
    pub mistake: Option<MistakeKind>,
    pub positions: Vec<Vec<Point>>,
    pub prop_trace: Vec<ltl::PropositionState>,
    pub step_labels: Vec<bool>,
    pub video_label: bool,
    pub features: crate::numerics::Tensor,
    pub segment_len: usize,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.step_labels.len()
    }

    pub fn raw_frame_count(&self) -> usize {
        self.steps() * self.segment_len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_are_valid_and_distinct() {
        let arenas: Vec<Arena> = (0..LAYOUT_COUNT).map(|i| Arena::layout(i).unwrap()).collect();
        for i in 0..LAYOUT_COUNT {
            for j in (i + 1)..LAYOUT_COUNT {
                assert_ne!(arenas[i], arenas[j]);
            }
        }
        assert!(matches!(Arena::layout(3), Err(SimError::UnknownLayout(3))));
    }

    #[test]
    fn arena_rejects_crowded_sites() {
        let mut arena = Arena::layout(0).unwrap();
        arena.ball = [0.3, 0.75];
        assert!(arena.validate().is_err());
        let mut arena = Arena::layout(0).unwrap();
        arena.vicinity_radius = 0.0;
        assert!(arena.validate().is_err());
        // a radius so large that the sites collide
        assert!(Arena::layout_with_radius(1, 0.4).is_err());
    }

    #[test]
    fn vicinity_rule() {
        let arena = Arena::layout(0).unwrap();
        let s = arena.propositions(&[arena.lion, arena.depot]);
        assert!(s.get(LION).unwrap());
        assert!(!s.get(BALL).unwrap());
        let s = arena.propositions(&[arena.depot, arena.depot]);
        assert!(!s.get(LION).unwrap() && !s.get(BALL).unwrap());
    }

    #[test]
    fn task_mistake_compatibility() {
        assert!(Task::Mutex.check_mistake(MistakeKind::MutexOverlap).is_ok());
        assert!(Task::Ordering.check_mistake(MistakeKind::MutexOverlap).is_err());
        assert!(Task::Mutex.check_mistake(MistakeKind::LionFirst).is_err());
        assert_eq!("ordering".parse::<Task>().unwrap(), Task::Ordering);
        assert!("both".parse::<Task>().is_err());
    }
}
