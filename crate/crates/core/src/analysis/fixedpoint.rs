use serde::Serialize;

use crate::dynamics::{
    forward_nonlinear_with, DistributionFlow, Evaluator, Flow, RandomizedStrategy, TimeGrid, ValueFlow,
};
use crate::error::{Error, Result};
use crate::hamiltonian::{backward_bellman_with, greedy_strategy_with};
use crate::model::{eval_terminal, ModelSpec};

/// Stop once consecutive population flows differ by at most this much.
pub const FIXED_POINT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct FixedPoint {
    /// Flow generated by `strategy` from `m0`.
    pub m_flow: DistributionFlow,
    /// Value flow against `m_flow` with terminal payoff `σ(m(T))`.
    pub phi_flow: ValueFlow,
    #[serde(skip)]
    pub strategy: RandomizedStrategy,
    /// `max_n ‖m^{k+1}(t_n) − m^k(t_n)‖∞` per iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Damped Picard iteration for the classical game: best-respond to the
/// current population flow, move the population along that response, and
/// mix the new flow into the old one with weight `damping`. Starts from the
/// constant flow `m0`.
pub fn solve_mfg_fixedpoint(
    model: &ModelSpec,
    m0: &[f64],
    grid: TimeGrid,
    damping: f64,
    max_iters: usize,
) -> Result<FixedPoint> {
    if model.terminal.is_none() {
        return Err(Error::Precondition(
            "the fixed point needs a terminal payoff sigma".into(),
        ));
    }
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "damping must lie in (0, 1], got {damping}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    model.check_distribution(m0, "m0")?;
    let ev = Evaluator::tabulated(model, grid)?;
    let respond = |m: &DistributionFlow| -> Result<(ValueFlow, RandomizedStrategy, DistributionFlow)> {
        let sigma = eval_terminal(model, m.last())?;
        let phi = backward_bellman_with(&ev, m, &sigma)?;
        let nu = greedy_strategy_with(&ev, m, &phi)?;
        let next = forward_nonlinear_with(&ev, m0, &nu)?;
        Ok((phi, nu, next))
    };

    let mut m = Flow::constant(grid, m0);
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters {
        let (_, _, target) = respond(&m)?;
        let mut residual: f64 = 0.0;
        for (old, new) in m.values.iter_mut().zip(&target.values) {
            for (o, v) in old.iter_mut().zip(new) {
                let step = damping * (v - *o);
                residual = residual.max(step.abs());
                *o += step;
            }
        }
        residuals.push(residual);
        if residual <= FIXED_POINT_TOL {
            converged = true;
            break;
        }
    }
    // report a consistent triple: the flow the final strategy generates
    let (_, strategy, m_flow) = respond(&m)?;
    let sigma = eval_terminal(model, m_flow.last())?;
    let phi_flow = backward_bellman_with(&ev, &m_flow, &sigma)?;
    Ok(FixedPoint {
        m_flow,
        phi_flow,
        strategy,
        residuals,
        converged,
    })
}
