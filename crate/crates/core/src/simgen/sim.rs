use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Arena, Plan, Point, SimError, Task, BALL, LION};
use crate::ltl::PropositionState;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `positions[t][robot]`
    pub positions: Vec<Vec<Point>>,
    pub prop_trace: Vec<PropositionState>,
}

/// Executes `plan` with Gaussian position jitter and extracts the
/// propositions at every step.
pub fn simulate(
    plan: &Plan,
    arena: &Arena,
    noise_sigma: f64,
    rng_seed: u64,
) -> Result<Trajectory, SimError> {
    if !(noise_sigma >= 0.0) {
        return Err(SimError::Config("noise sigma must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let jitter = Normal::new(0.0, noise_sigma).map_err(|e| SimError::Config(e.to_string()))?;
    let mut positions = Vec::with_capacity(plan.steps);
    let mut prop_trace = Vec::with_capacity(plan.steps);
    for t in 0..plan.steps {
        let row: Vec<Point> = plan
            .robots
            .iter()
            .map(|r| {
                let p = r.position_at(t, plan.steps_per_leg);
                let dx = jitter.sample(&mut rng);
                let dy = jitter.sample(&mut rng);
                [(p[0] + dx).clamp(0.0, 1.0), (p[1] + dy).clamp(0.0, 1.0)]
            })
            .collect();
        prop_trace.push(arena.propositions(&row));
        positions.push(row);
    }
    Ok(Trajectory {
        positions,
        prop_trace,
    })
}

/// Step-level mistake labels.
///
/// Mutual exclusion marks every step where both objects are visited.
/// Ordering marks lion visits made before the ball has ever been visited;
/// a run that never reaches either object has its final step marked.
pub fn label_steps(task: Task, trace: &[PropositionState]) -> Result<Vec<bool>, SimError> {
    let mut labels = Vec::with_capacity(trace.len());
    match task {
        Task::Mutex => {
            for s in trace {
                labels.push(s.get(LION)? && s.get(BALL)?);
            }
        }
        Task::Ordering => {
            let mut ball_seen = false;
            let mut lion_seen = false;
            for s in trace {
                let (lion, ball) = (s.get(LION)?, s.get(BALL)?);
                ball_seen |= ball;
                lion_seen |= lion;
                labels.push(lion && !ball_seen);
            }
            if !ball_seen && !lion_seen {
                if let Some(last) = labels.last_mut() {
                    *last = true;
                }
            }
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltl::{eval_finite, monitor, MonitorStatus};
    use crate::simgen::{plan_episode, MistakeKind, PlanConfig, RobotPlan, Waypoint};
    use rand::Rng;

    fn lb(l: bool, b: bool) -> PropositionState {
        PropositionState::from_pairs([(LION, l), (BALL, b)])
    }

    #[test]
    fn mutex_labels_joint_steps() {
        let trace: Vec<_> = (0..7).map(|t| lb(t >= 2, t == 3 || t == 4)).collect();
        let labels = label_steps(Task::Mutex, &trace).unwrap();
        let hot: Vec<usize> = (0..7).filter(|&t| labels[t]).collect();
        assert_eq!(hot, vec![3, 4]);
    }

    #[test]
    fn ordering_labels_early_lion_steps() {
        let trace: Vec<_> = (0..8).map(|t| lb(t == 2 || t == 3 || t == 6, t == 5)).collect();
        let labels = label_steps(Task::Ordering, &trace).unwrap();
        let hot: Vec<usize> = (0..8).filter(|&t| labels[t]).collect();
        assert_eq!(hot, vec![2, 3]);
        let idle = vec![lb(false, false); 4];
        assert_eq!(label_steps(Task::Ordering, &idle).unwrap(), vec![false, false, false, true]);
    }

    #[test]
    fn video_label_matches_formula_on_random_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for task in [Task::Mutex, Task::Ordering] {
            let phi = task.formula();
            for _ in 0..1000 {
                let len = rng.random_range(1..=20);
                let trace: Vec<_> = (0..len)
                    .map(|_| lb(rng.random_bool(0.3), rng.random_bool(0.3)))
                    .collect();
                let labels = label_steps(task, &trace).unwrap();
                let video = labels.iter().any(|&l| l);
                assert_eq!(video, !eval_finite(&phi, &trace).unwrap());
                // the restarting monitor marks exactly the same steps
                assert_eq!(monitor(&phi, &trace).unwrap().per_step_violation, labels);
            }
        }
    }

    fn single(waypoints: Vec<Waypoint>, start: Point) -> Plan {
        Plan {
            task: Task::Mutex,
            layout: 0,
            mistake: None,
            steps_per_leg: 5,
            steps: 12,
            robots: vec![
                RobotPlan {
                    start,
                    start_delay: 0,
                    waypoints,
                    decoy: false,
                },
                RobotPlan {
                    start,
                    start_delay: 0,
                    waypoints: Vec::new(),
                    decoy: true,
                },
            ],
        }
    }

    #[test]
    fn arrival_at_lion_sets_proposition() {
        let arena = Arena::layout(0).unwrap();
        let plan = single(vec![Waypoint { pos: arena.lion, dwell: 2 }], arena.depot);
        let run = simulate(&plan, &arena, 0.0, 0).unwrap();
        assert_eq!(run.positions[5][0], arena.lion);
        assert!(run.prop_trace[5].get(LION).unwrap());
        assert!(!run.prop_trace[0].get(LION).unwrap());
    }

    #[test]
    fn stationary_robots_fire_nothing() {
        let arena = Arena::layout(2).unwrap();
        let plan = single(Vec::new(), arena.depot);
        let run = simulate(&plan, &arena, 0.01, 3).unwrap();
        assert!(run
            .prop_trace
            .iter()
            .all(|s| !s.get(LION).unwrap() && !s.get(BALL).unwrap()));
    }

    #[test]
    fn jittered_replay_is_identical() {
        let arena = Arena::layout(1).unwrap();
        let plan = plan_episode(Task::Mutex, 1, &arena, 3, Some(MistakeKind::MutexOverlap), &PlanConfig::default(), 9).unwrap();
        let a = simulate(&plan, &arena, 0.02, 44).unwrap();
        let b = simulate(&plan, &arena, 0.02, 44).unwrap();
        assert_eq!(a, b);
        let c = simulate(&plan, &arena, 0.02, 45).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn generated_plans_have_intended_labels() {
        let cfg = PlanConfig::default();
        for task in [Task::Mutex, Task::Ordering] {
            let phi = task.formula();
            for layout in 0..3 {
                let arena = Arena::layout(layout).unwrap();
                for mistake in [None, Some(task.default_mistake())] {
                    for seed in 0..100 {
                        let plan = plan_episode(task, layout, &arena, 3, mistake, &cfg, seed).unwrap();
                        let run = simulate(&plan, &arena, 0.005, seed + 1000).unwrap();
                        let verdict = monitor(&phi, &run.prop_trace).unwrap();
                        let expected = if mistake.is_some() {
                            MonitorStatus::Violated
                        } else {
                            MonitorStatus::Satisfied
                        };
                        assert_eq!(verdict.status, expected, "{task} layout {layout} seed {seed}");
                    }
                }
            }
        }
    }

    #[test]
    fn decoys_never_change_labels() {
        let cfg = PlanConfig::default();
        for task in [Task::Mutex, Task::Ordering] {
            for seed in 0..60 {
                let layout = (seed % 3) as usize;
                let arena = Arena::layout(layout).unwrap();
                let mistake = (seed % 2 == 1).then(|| task.default_mistake());
                let plan = plan_episode(task, layout, &arena, 4, mistake, &cfg, seed).unwrap();
                let run = simulate(&plan, &arena, 0.005, seed).unwrap();
                let without_decoys: Vec<PropositionState> = run
                    .positions
                    .iter()
                    .map(|row| {
                        let kept: Vec<Point> = row
                            .iter()
                            .zip(&plan.robots)
                            .filter(|(_, r)| !r.decoy)
                            .map(|(p, _)| *p)
                            .collect();
                        arena.propositions(&kept)
                    })
                    .collect();
                assert_eq!(
                    label_steps(task, &run.prop_trace).unwrap(),
                    label_steps(task, &without_decoys).unwrap()
                );
            }
        }
    }
}
