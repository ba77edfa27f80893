use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{DistributionFlow, Evaluator, RandomizedStrategy};
use crate::error::{Error, Result};
use crate::hamiltonian::payoff_with;
use crate::model::ModelSpec;

/// Largest number of candidates the enumeration accepts.
pub const ENUMERATION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Serialize)]
pub struct BruteForce {
    pub best_payoff: f64,
    /// `choices[c][i]`: index into the model action grid played in state
    /// `i` on coarse interval `c`.
    pub choices: Vec<Vec<usize>>,
    pub candidates: usize,
    #[serde(skip)]
    pub strategy: RandomizedStrategy,
}

/// Evenly spread indices into an action grid of `len` points.
fn coarse_indices(len: usize, count: usize) -> Vec<usize> {
    if count == 1 {
        return vec![0];
    }
    (0..count)
        .map(|j| (j * (len - 1) + (count - 1) / 2) / (count - 1))
        .collect()
}

/// Best payoff of a player starting from `mu0`, over all pure feedback
/// strategies constant on each of `coarse_steps` equal time intervals
/// and using `coarse_actions` evenly spread grid actions, evaluated
/// exactly on the fine grid of `m_flow`. Ties keep the first candidate in
/// enumeration order.
pub fn brute_force_value(
    model: &ModelSpec,
    mu0: &[f64],
    m_flow: &DistributionFlow,
    sigma: &[f64],
    coarse_steps: usize,
    coarse_actions: usize,
) -> Result<BruteForce> {
    let d = model.dim;
    let na = model.actions.len();
    if coarse_steps == 0 || coarse_actions == 0 {
        return Err(Error::InvalidArgument(
            "need at least one coarse step and action".into(),
        ));
    }
    if coarse_actions > na {
        return Err(Error::InvalidArgument(format!(
            "{coarse_actions} coarse actions from a grid of {na}"
        )));
    }
    let count = (coarse_actions as f64).powi(d as i32).powi(coarse_steps as i32);
    if coarse_steps > 8 || coarse_actions > 5 || d > 3 || count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationBound {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let grid = m_flow.grid;
    if !grid.steps.is_multiple_of(coarse_steps) {
        return Err(Error::GridMismatch(format!(
            "{} fine steps do not split into {coarse_steps} coarse intervals",
            grid.steps
        )));
    }
    model.check_distribution(mu0, "mu0")?;
    if sigma.len() != d {
        return Err(Error::Dimension(format!(
            "sigma has {} entries, expected {d}",
            sigma.len()
        )));
    }
    let ev = Evaluator::tabulated(model, grid)?;
    let actions = coarse_indices(na, coarse_actions);
    let per = grid.steps / coarse_steps;
    let decode = |mut idx: usize| -> Vec<Vec<usize>> {
        (0..coarse_steps)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let k = actions[idx % coarse_actions];
                        idx /= coarse_actions;
                        k
                    })
                    .collect()
            })
            .collect()
    };
    let build =
        |choices: &[Vec<usize>]| RandomizedStrategy::from_fn(grid, d, na, |n, i, w| w[choices[n / per][i]] = 1.0);
    let n = count as usize;
    let (best, best_idx) = (0..n)
        .into_par_iter()
        .map(|idx| -> Result<(f64, usize)> {
            let nu = build(&decode(idx));
            Ok((payoff_with(&ev, mu0, &nu, m_flow, sigma)?, idx))
        })
        .try_reduce(
            || (f64::NEG_INFINITY, usize::MAX),
            |a, b| Ok(if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a }),
        )?;
    let choices = decode(best_idx);
    Ok(BruteForce {
        best_payoff: best,
        strategy: build(&choices),
        choices,
        candidates: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{forward_nonlinear, Flow, TimeGrid};
    use crate::hamiltonian::backward_bellman;
    use crate::model::builtin;

    #[test]
    fn coarse_indices_include_ends() {
        assert_eq!(coarse_indices(101, 5), vec![0, 25, 50, 75, 100]);
        assert_eq!(coarse_indices(2, 2), vec![0, 1]);
        assert_eq!(coarse_indices(7, 1), vec![0]);
    }

    #[test]
    fn zero_payoff_model() {
        let model = builtin::zero_rates(2);
        let grid = TimeGrid::new(8, 1.0).unwrap();
        let m = Flow::constant(grid, &[0.5, 0.5]);
        let r = brute_force_value(&model, &[0.5, 0.5], &m, &[0.0, 0.0], 4, 2).unwrap();
        assert_eq!(r.best_payoff, 0.0);
        assert_eq!(r.candidates, 256);
    }

    #[test]
    fn two_state_prefers_jumping() {
        let model = builtin::two_state();
        let grid = TimeGrid::new(400, 1.0).unwrap();
        let m = Flow::constant(grid, &[1.0, 0.0]);
        let r = brute_force_value(&model, &[1.0, 0.0], &m, &[0.0, 1.0], 4, 2).unwrap();
        assert!((r.best_payoff - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
        assert!(r.choices.iter().all(|c| c[0] == 1));
    }

    #[test]
    fn bellman_dominates_enumeration() {
        let model = builtin::section4();
        let grid = TimeGrid::new(400, 1.0).unwrap();
        let nu = RandomizedStrategy::uniform(grid, 3, model.actions.len());
        let m = forward_nonlinear(&model, &[1.0, 0.0, 0.0], &nu).unwrap();
        let mu0 = [0.5, 0.3, 0.2];
        let sigma = [0.0, 0.0, 0.0];
        let phi = backward_bellman(&model, &m, &sigma).unwrap();
        let bellman: f64 = mu0.iter().zip(phi.initial()).map(|(a, b)| a * b).sum();
        let mut last_gap = f64::INFINITY;
        for steps in [1, 2, 4] {
            let r = brute_force_value(&model, &mu0, &m, &sigma, steps, 2).unwrap();
            assert!(bellman >= r.best_payoff - 1e-9);
            assert!(bellman - r.best_payoff <= last_gap + 1e-12);
            last_gap = bellman - r.best_payoff;
        }
    }

    #[test]
    fn guards_enumeration_size() {
        let model = builtin::section4();
        let grid = TimeGrid::new(16, 1.0).unwrap();
        let m = Flow::constant(grid, &[1.0, 0.0, 0.0]);
        assert!(matches!(
            brute_force_value(&model, &[1.0, 0.0, 0.0], &m, &[0.0; 3], 8, 5),
            Err(Error::EnumerationBound { .. })
        ));
        assert!(brute_force_value(&model, &[1.0, 0.0, 0.0], &m, &[0.0; 3], 3, 2).is_err());
    }
}
