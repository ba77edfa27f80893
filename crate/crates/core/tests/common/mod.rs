//! Constructed planning problems with known classical solutions.

#![allow(dead_code)]

use mfg_planning::builtin;
use mfg_planning::dynamics::{forward_nonlinear, RandomizedStrategy, TimeGrid};
use mfg_planning::hamiltonian::{backward_bellman, greedy_strategy};
use mfg_planning::planning::{Decision, PlanningProblem};
use mfg_planning::ModelSpec;

/// A model, a planning problem and a decision solving it classically.
pub struct Constructed {
    pub name: &'static str,
    pub model: ModelSpec,
    pub problem: PlanningProblem,
    pub decision: Decision,
}

/// Everyone in state 1 jumps at full rate; the target is where that lands.
pub fn two_state(steps: usize) -> Constructed {
    let model = builtin::two_state();
    let grid = TimeGrid::new(steps, 1.0).unwrap();
    let m0 = vec![1.0, 0.0];
    let nu = RandomizedStrategy::dirac(grid, 2, 2, 1);
    let m = forward_nonlinear(&model, &m0, &nu).unwrap();
    let problem = PlanningProblem::new(m0, m.last().to_vec(), vec![0.5, 0.5], grid).unwrap();
    // the value flow under terminal reward (0, 1) picks the same strategy
    let phi = backward_bellman(&model, &m, &[0.0, 1.0]).unwrap();
    let mut strategy = greedy_strategy(&model, &m, &phi).unwrap();
    strategy.canonicalize(&model);
    let decision = Decision::new(strategy, vec![-0.5, 0.5]).unwrap();
    Constructed {
        name: "two-state",
        model,
        problem,
        decision,
    }
}

/// Exit at full rate before `switch_time` and never after, with the
/// terminal payoff tuned so that `φ2 − φ1` meets the exit price exactly at
/// the switch node: the strategy is then the grid argmax at every node.
pub fn exit(steps: usize, switch_time: f64) -> Constructed {
    let model = builtin::exit();
    let grid = TimeGrid::new(steps, 1.0).unwrap();
    let switch = (switch_time * steps as f64).round() as usize;
    let m0 = vec![1.0, 0.0];
    let nu = RandomizedStrategy::from_fn(grid, 2, 2, |n, i, w| {
        w[usize::from(i == 0 && n < switch)] = 1.0;
    });
    let m = forward_nonlinear(&model, &m0, &nu).unwrap();
    let excess = |spread: f64| {
        let phi = backward_bellman(&model, &m, &[-0.5 * spread, 0.5 * spread]).unwrap();
        phi.values[switch][1] - phi.values[switch][0] - builtin::EXIT_COST
    };
    let (mut lo, mut hi) = (-5.0, 5.0);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let spread = 0.5 * (lo + hi);
    let problem = PlanningProblem::new(m0, m.last().to_vec(), vec![0.5, 0.5], grid).unwrap();
    let decision = Decision::new(nu, vec![-0.5 * spread, 0.5 * spread]).unwrap();
    Constructed {
        name: "exit",
        model,
        problem,
        decision,
    }
}
