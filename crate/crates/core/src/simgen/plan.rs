use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{distance, segment_distance, Arena, MistakeKind, Point, SimError, Task};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub pos: Point,
    /// Steps spent at `pos` after arriving.
    pub dwell: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotPlan {
    pub start: Point,
    pub start_delay: usize,
    pub waypoints: Vec<Waypoint>,
    pub decoy: bool,
}

impl RobotPlan {
    fn idle(start: Point) -> Self {
        Self {
            start,
            start_delay: 0,
            waypoints: Vec::new(),
            decoy: true,
        }
    }

    /// Step at which the robot has finished its last waypoint.
    pub fn finish_step(&self, steps_per_leg: usize) -> usize {
        self.start_delay
            + self
                .waypoints
                .iter()
                .map(|w| steps_per_leg + w.dwell)
                .sum::<usize>()
    }

    /// Position at `step`, moving in straight lines and covering each leg in
    /// `steps_per_leg` steps.
    pub fn position_at(&self, step: usize, steps_per_leg: usize) -> Point {
        let mut from = self.start;
        let mut t = self.start_delay;
        if step <= t {
            return from;
        }
        for w in &self.waypoints {
            if step <= t + steps_per_leg {
                let frac = (step - t) as f64 / steps_per_leg as f64;
                return [
                    from[0] + frac * (w.pos[0] - from[0]),
                    from[1] + frac * (w.pos[1] - from[1]),
                ];
            }
            t += steps_per_leg;
            if step <= t + w.dwell {
                return w.pos;
            }
            t += w.dwell;
            from = w.pos;
        }
        from
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub steps_per_leg: usize,
    pub min_dwell: usize,
    pub max_dwell: usize,
    pub max_start_delay: usize,
    /// Idle steps appended after the last robot finishes, drawn from 0..=max_tail.
    pub max_tail: usize,
    /// Longest admissible episode.
    pub horizon: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            steps_per_leg: 8,
            min_dwell: 3,
            max_dwell: 6,
            max_start_delay: 6,
            max_tail: 6,
            horizon: 72,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.steps_per_leg == 0 {
            return Err(SimError::Config("steps_per_leg must be positive".into()));
        }
        if self.min_dwell < 2 || self.min_dwell > self.max_dwell {
            return Err(SimError::Config("need 2 <= min_dwell <= max_dwell".into()));
        }
        Ok(())
    }
}

/// Waypoint schedule for every robot of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub task: Task,
    pub layout: usize,
    pub mistake: Option<MistakeKind>,
    pub steps_per_leg: usize,
    pub steps: usize,
    pub robots: Vec<RobotPlan>,
}

impl Plan {
    pub fn num_robots(&self) -> usize {
        self.robots.len()
    }
}

struct Builder<'a> {
    arena: &'a Arena,
    config: &'a PlanConfig,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn dwell(&mut self) -> usize {
        self.rng
            .random_range(self.config.min_dwell..=self.config.max_dwell)
    }

    fn delay(&mut self) -> usize {
        self.rng.random_range(0..=self.config.max_start_delay)
    }

    fn visit(&mut self, site: Point) -> Waypoint {
        Waypoint {
            pos: site,
            dwell: self.dwell(),
        }
    }

    fn home(start: Point) -> Waypoint {
        Waypoint { pos: start, dwell: 0 }
    }

    fn actor(start: Point, start_delay: usize, waypoints: Vec<Waypoint>) -> RobotPlan {
        RobotPlan {
            start,
            start_delay,
            waypoints,
            decoy: false,
        }
    }

    // Length of a single out-and-back trip: leg, dwell, leg.
    fn trip_len(&self, w: &Waypoint) -> usize {
        2 * self.config.steps_per_leg + w.dwell
    }

    fn clear_of_objects(&self, from: Point, to: Point) -> bool {
        let keep_out = 2.0 * self.arena.vicinity_radius;
        [self.arena.lion, self.arena.ball]
            .iter()
            .all(|&site| segment_distance(site, from, to) > keep_out)
    }

    /// Wandering that never comes within twice the radius of either object,
    /// including along the straight legs.
    fn decoy(&mut self, start: Point) -> RobotPlan {
        let stops = self.rng.random_range(1..=3);
        let mut waypoints = Vec::new();
        let mut at = start;
        for _ in 0..stops {
            let candidate = (0..64).find_map(|_| {
                let p = [self.rng.random_range(0.05..0.95), self.rng.random_range(0.05..0.95)];
                (self.clear_of_objects(at, p) && self.clear_of_objects(p, start)).then_some(p)
            });
            let Some(p) = candidate else { break };
            let dwell = self.rng.random_range(0..=self.config.max_dwell);
            waypoints.push(Waypoint { pos: p, dwell });
            at = p;
        }
        if waypoints.is_empty() {
            return RobotPlan::idle(start);
        }
        waypoints.push(Self::home(start));
        RobotPlan {
            start,
            start_delay: self.delay(),
            waypoints,
            decoy: true,
        }
    }
}

/// Builds a waypoint schedule.
///
/// Compliant plans visit the objects at times that satisfy the task formula,
/// mistake plans force the named violation; in both cases the remaining
/// robots act as decoys and the robot-to-role assignment is shuffled.
pub fn plan_episode(
    task: Task,
    layout: usize,
    arena: &Arena,
    num_robots: usize,
    mistake: Option<MistakeKind>,
    config: &PlanConfig,
    rng_seed: u64,
) -> Result<Plan, SimError> {
    config.validate()?;
    arena.validate()?;
    if num_robots < 2 {
        return Err(SimError::Config("at least two robots are required".into()));
    }
    if let Some(m) = mistake {
        task.check_mistake(m)?;
    }
    let mut b = Builder {
        arena,
        config,
        rng: ChaCha8Rng::seed_from_u64(rng_seed),
    };
    let leg = config.steps_per_leg;
    let starts: Vec<Point> = (0..num_robots)
        .map(|_| {
            let angle = b.rng.random_range(0.0..std::f64::consts::TAU);
            let r = b.rng.random_range(0.0..0.04);
            [
                (arena.depot[0] + r * angle.cos()).clamp(0.0, 1.0),
                (arena.depot[1] + r * angle.sin()).clamp(0.0, 1.0),
            ]
        })
        .collect();
    let mut order: Vec<usize> = (0..num_robots).collect();
    order.shuffle(&mut b.rng);
    let (a, c) = (order[0], order[1]);
    let (lion, ball) = (arena.lion, arena.ball);

    let mut actors: Vec<(usize, RobotPlan)> = Vec::new();
    match (task, mistake) {
        (Task::Mutex, None) => {
            if b.rng.random_bool(0.3) {
                // one robot visits both objects in turn
                let (first, second) = if b.rng.random_bool(0.5) { (lion, ball) } else { (ball, lion) };
                let wps = vec![b.visit(first), b.visit(second), Builder::home(starts[a])];
                actors.push((a, Builder::actor(starts[a], b.delay(), wps)));
            } else {
                let (first, second) = if b.rng.random_bool(0.5) { (lion, ball) } else { (ball, lion) };
                let w1 = b.visit(first);
                let d1 = b.delay();
                let d2 = if b.rng.random_bool(0.3) {
                    // second robot leaves only once the first is home again
                    d1 + b.trip_len(&w1) + 1 + b.rng.random_range(0..=2)
                } else {
                    // second robot travels while the first is still out, but
                    // arrives only after the first has cleared its object
                    d1 + w1.dwell + 5 + b.rng.random_range(0..=leg)
                };
                let w2 = b.visit(second);
                actors.push((a, Builder::actor(starts[a], d1, vec![w1, Builder::home(starts[a])])));
                actors.push((c, Builder::actor(starts[c], d2, vec![w2, Builder::home(starts[c])])));
            }
        }
        (Task::Mutex, Some(_)) => {
            let wl = b.visit(lion);
            let wb = b.visit(ball);
            let d1 = b.delay();
            // dwell windows [d + leg, d + leg + dwell] overlap by at least two steps
            let lo = -(wb.dwell as i64 - 2);
            let hi = wl.dwell as i64 - 2;
            let shift = b.rng.random_range(lo..=hi);
            let base = (d1 as i64).max(-lo);
            let d_lion = base as usize;
            let d_ball = (base + shift) as usize;
            actors.push((a, Builder::actor(starts[a], d_lion, vec![wl, Builder::home(starts[a])])));
            actors.push((c, Builder::actor(starts[c], d_ball, vec![wb, Builder::home(starts[c])])));
        }
        (Task::Ordering, None) => match b.rng.random_range(0..3) {
            0 => {
                let wps = vec![b.visit(ball), b.visit(lion), Builder::home(starts[a])];
                actors.push((a, Builder::actor(starts[a], b.delay(), wps)));
            }
            1 => {
                let d1 = b.delay();
                // the lion robot sets off once the ball has been reached
                let d2 = d1 + leg + b.rng.random_range(0..=4);
                let wb = b.visit(ball);
                let wl = b.visit(lion);
                actors.push((a, Builder::actor(starts[a], d1, vec![wb, Builder::home(starts[a])])));
                actors.push((c, Builder::actor(starts[c], d2, vec![wl, Builder::home(starts[c])])));
            }
            _ => {
                let wb = b.visit(ball);
                actors.push((a, Builder::actor(starts[a], b.delay(), vec![wb, Builder::home(starts[a])])));
            }
        },
        (Task::Ordering, Some(_)) => {
            if b.rng.random_bool(0.4) {
                let wps = vec![b.visit(lion), b.visit(ball), Builder::home(starts[a])];
                actors.push((a, Builder::actor(starts[a], b.delay(), wps)));
            } else {
                let d1 = b.delay();
                let wl = b.visit(lion);
                actors.push((a, Builder::actor(starts[a], d1, vec![wl, Builder::home(starts[a])])));
                if b.rng.random_bool(0.7) {
                    // the ball is only approached after the lion has been reached
                    let d2 = d1 + leg + b.rng.random_range(0..=4);
                    let wb = b.visit(ball);
                    actors.push((c, Builder::actor(starts[c], d2, vec![wb, Builder::home(starts[c])])));
                }
            }
        }
    }

    let mut robots: Vec<Option<RobotPlan>> = vec![None; num_robots];
    for (i, plan) in actors {
        robots[i] = Some(plan);
    }
    let robots: Vec<RobotPlan> = robots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| slot.unwrap_or_else(|| b.decoy(starts[i])))
        .collect();

    let busy = robots
        .iter()
        .map(|r| r.finish_step(leg))
        .max()
        .unwrap_or(0);
    let steps = busy + 1 + b.rng.random_range(0..=config.max_tail);
    if steps > config.horizon {
        return Err(SimError::Infeasible {
            needed: steps,
            horizon: config.horizon,
        });
    }
    debug_assert!(robots
        .iter()
        .all(|r| r.waypoints.last().is_none_or(|w| distance(w.pos, r.start) == 0.0)));
    Ok(Plan {
        task,
        layout,
        mistake,
        steps_per_leg: leg,
        steps,
        robots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_follows_legs_and_dwells() {
        let plan = RobotPlan {
            start: [0.0, 0.0],
            start_delay: 2,
            waypoints: vec![
                Waypoint { pos: [1.0, 0.0], dwell: 3 },
                Waypoint { pos: [0.0, 0.0], dwell: 0 },
            ],
            decoy: false,
        };
        assert_eq!(plan.position_at(0, 4), [0.0, 0.0]);
        assert_eq!(plan.position_at(2, 4), [0.0, 0.0]);
        assert_eq!(plan.position_at(4, 4), [0.5, 0.0]);
        assert_eq!(plan.position_at(6, 4), [1.0, 0.0]);
        assert_eq!(plan.position_at(9, 4), [1.0, 0.0]);
        assert_eq!(plan.position_at(11, 4), [0.5, 0.0]);
        assert_eq!(plan.position_at(13, 4), [0.0, 0.0]);
        assert_eq!(plan.position_at(50, 4), [0.0, 0.0]);
        assert_eq!(plan.finish_step(4), 13);
    }

    #[test]
    fn rejects_bad_requests() {
        let arena = Arena::layout(0).unwrap();
        let cfg = PlanConfig::default();
        assert!(matches!(
            plan_episode(Task::Ordering, 0, &arena, 3, Some(MistakeKind::MutexOverlap), &cfg, 1),
            Err(SimError::IncompatibleMistake { .. })
        ));
        assert!(plan_episode(Task::Mutex, 0, &arena, 1, None, &cfg, 1).is_err());
        let tight = PlanConfig {
            horizon: 20,
            ..PlanConfig::default()
        };
        assert!(matches!(
            plan_episode(Task::Ordering, 0, &arena, 3, None, &tight, 1),
            Err(SimError::Infeasible { horizon: 20, .. })
        ));
    }

    #[test]
    fn roles_are_shuffled() {
        let arena = Arena::layout(1).unwrap();
        let cfg = PlanConfig::default();
        let mut acting = std::collections::BTreeSet::new();
        for seed in 0..40 {
            let plan = plan_episode(Task::Ordering, 1, &arena, 3, Some(MistakeKind::LionFirst), &cfg, seed).unwrap();
            for (i, r) in plan.robots.iter().enumerate() {
                if !r.decoy {
                    acting.insert(i);
                }
            }
        }
        assert_eq!(acting.len(), 3);
    }
}
