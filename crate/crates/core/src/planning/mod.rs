//! Regret minimization for the planning problem: the regret functional,
//! the ball-constrained solver and the increasing-radius driver.

mod adjoint;
mod metric;
mod optimize;
mod settings;

pub use metric::{strategy_metric, DEFAULT_TERMS as DEFAULT_METRIC_TERMS};
pub use optimize::{
    check_gradient, minimal_regret_sequence, project_simplex, solve_constrained, solve_from, GradientReport,
    SequenceReport,
};
pub use settings::{AlphaSchedule, OptimizerSettings};

use serde::Serialize;
use serde_json::json;

use crate::dynamics::{DistributionFlow, Evaluator, RandomizedStrategy, TimeGrid, ValueFlow};
use crate::error::{Error, Result};
use crate::model::{builtin, check_simplex, eval_const, ModelSpec};
use adjoint::RegretEngine;

/// Boundary data of a planning problem on a fixed time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanningProblem {
    pub m0: Vec<f64>,
    pub m_t: Vec<f64>,
    /// Weighting distribution of the regret; all entries positive.
    pub mu0: Vec<f64>,
    pub grid: TimeGrid,
}

impl PlanningProblem {
    pub fn new(m0: Vec<f64>, m_t: Vec<f64>, mu0: Vec<f64>, grid: TimeGrid) -> Result<Self> {
        let d = m0.len();
        check_simplex(&m0, d, 1e-9, "m0")?;
        check_simplex(&m_t, d, 1e-9, "mT")?;
        check_simplex(&mu0, d, 1e-9, "mu0")?;
        if let Some(i) = mu0.iter().position(|v| *v <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weighting distribution must be strictly positive; entry {} is {}",
                i + 1,
                mu0[i]
            )));
        }
        Ok(PlanningProblem { m0, m_t, mu0, grid })
    }

    pub fn dim(&self) -> usize {
        self.m0.len()
    }

    pub fn check_model(&self, model: &ModelSpec) -> Result<()> {
        if model.dim != self.dim() {
            return Err(Error::Dimension(format!(
                "problem has {} states, model {}",
                self.dim(),
                model.dim
            )));
        }
        if (self.grid.horizon - model.horizon).abs() > 1e-12 * model.horizon.max(1.0) {
            return Err(Error::GridMismatch(format!(
                "problem horizon {} differs from model horizon {}",
                self.grid.horizon, model.horizon
            )));
        }
        Ok(())
    }

    /// The three-state example: start in state 1, reach the distribution
    /// produced by the unique steering control, uniform weighting.
    pub fn section4(steps: usize) -> Self {
        PlanningProblem::new(
            builtin::section4_m0(),
            builtin::section4_target(),
            vec![1.0 / 3.0; 3],
            TimeGrid::new(steps, 1.0).expect("positive steps"),
        )
        .expect("valid problem")
    }

    /// Reads `key = value` lines with keys `m0`, `mT` and optionally `mu0`
    /// (uniform when absent). Values are comma-separated constant
    /// expressions, optionally in brackets; `#` starts a comment.
    pub fn parse(text: &str, grid: TimeGrid) -> Result<Self> {
        let (mut m0, mut m_t, mut mu0) = (None, None, None);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse(format!("problem line {}: {msg}", lineno + 1));
            let (key, raw) = line.split_once('=').ok_or_else(|| bad("expected key = value".into()))?;
            let raw = raw.trim();
            let raw = raw.strip_prefix('[').and_then(|r| r.strip_suffix(']')).unwrap_or(raw);
            let values = raw
                .split(',')
                .map(|v| eval_const(v.trim()).map_err(|e| bad(format!("{e}"))))
                .collect::<Result<Vec<f64>>>()?;
            let slot = match key.trim() {
                "m0" => &mut m0,
                "mT" => &mut m_t,
                "mu0" => &mut mu0,
                other => return Err(bad(format!("unknown key '{other}'"))),
            };
            if slot.replace(values).is_some() {
                return Err(bad(format!("'{}' given twice", key.trim())));
            }
        }
        let m0: Vec<f64> = m0.ok_or_else(|| Error::Parse("problem: missing m0".into()))?;
        let m_t = m_t.ok_or_else(|| Error::Parse("problem: missing mT".into()))?;
        let d = m0.len();
        if m_t.len() != d {
            return Err(Error::Dimension(format!("m0 has {d} entries, mT {}", m_t.len())));
        }
        let mu0 = mu0.unwrap_or_else(|| vec![1.0 / d as f64; d]);
        if mu0.len() != d {
            return Err(Error::Dimension(format!("m0 has {d} entries, mu0 {}", mu0.len())));
        }
        PlanningProblem::new(m0, m_t, mu0, grid)
    }

    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Ok(PlanningProblem {
            grid: TimeGrid::new(steps, self.grid.horizon)?,
            ..self.clone()
        })
    }
}

/// The control variables: terminal payoff and randomized feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub strategy: RandomizedStrategy,
    pub phi_t: Vec<f64>,
}

impl Decision {
    pub fn new(strategy: RandomizedStrategy, phi_t: Vec<f64>) -> Result<Self> {
        if phi_t.len() != strategy.dim() || phi_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "terminal payoff must be a finite d-vector".into(),
            ));
        }
        Ok(Decision { strategy, phi_t })
    }

    /// Re-samples the strategy on another grid over the same horizon by
    /// time-averaging the weights.
    pub fn resample(&self, grid: TimeGrid) -> Result<Self> {
        let src = &self.strategy;
        let g0 = src.grid();
        if (g0.horizon - grid.horizon).abs() > 1e-12 {
            return Err(Error::GridMismatch("horizons differ".into()));
        }
        let h = grid.step();
        let strategy = RandomizedStrategy::from_fn(grid, src.dim(), src.n_actions(), |n, i, w| {
            let (a, b) = (grid.node(n), grid.node(n + 1));
            let mut s = g0.step_containing(a);
            while s < g0.steps {
                let lo = g0.node(s).max(a);
                let hi = g0.node(s + 1).min(b);
                if hi > lo {
                    for (o, v) in w.iter_mut().zip(src.weights(s, i)) {
                        *o += v * (hi - lo) / h;
                    }
                }
                if g0.node(s + 1) >= b {
                    break;
                }
                s += 1;
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
        });
        Decision::new(strategy, self.phi_t.clone())
    }
}

/// A decision with its flows, regret and terminal gap.
#[derive(Debug, Clone)]
pub struct RegretResult {
    pub decision: Decision,
    pub m_flow: DistributionFlow,
    pub mu_flow: DistributionFlow,
    pub phi_flow: ValueFlow,
    pub j: f64,
    /// Euclidean `‖m(T) − mT‖`.
    pub terminal_gap: f64,
    /// Ball radius the decision was optimized under, or `‖φ_T‖` for a
    /// plain evaluation.
    pub alpha: f64,
    /// Whether the gap is within the feasibility tolerance in force.
    pub feasible: bool,
    /// Index of the optimizer start that produced this result.
    pub start: usize,
}

impl RegretResult {
    /// JSON summary: value, gap, radius, terminal payoff and end state.
    pub fn summary(&self) -> serde_json::Value {
        json!({
            "J": self.j,
            "terminal_gap": self.terminal_gap,
            "alpha": self.alpha,
            "feasible": self.feasible,
            "start": self.start,
            "phi_T": self.decision.phi_t,
            "phi_0": self.phi_flow.initial(),
            "m_T": self.m_flow.last(),
            "steps": self.m_flow.grid.steps,
        })
    }
}

pub fn euclidean(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_decision(model: &ModelSpec, problem: &PlanningProblem, decision: &Decision) -> Result<()> {
    problem.check_model(model)?;
    decision.strategy.check_compatible(model)?;
    if decision.strategy.grid() != problem.grid {
        return Err(Error::GridMismatch(format!(
            "decision grid {:?} differs from problem grid {:?}",
            decision.strategy.grid(),
            problem.grid
        )));
    }
    if decision.phi_t.len() != model.dim {
        return Err(Error::Dimension("terminal payoff length".into()));
    }
    Ok(())
}

/// Regret `J = μ0·φ(0) − μ(T)·φ_T − ∫ μ(t)·g(t, m(t), ν(t)) dt` of a
/// decision, with `m`, `φ`, `μ` integrated on the problem grid.
pub fn regret_j(model: &ModelSpec, problem: &PlanningProblem, decision: &Decision) -> Result<RegretResult> {
    check_decision(model, problem, decision)?;
    let engine = RegretEngine {
        ev: Evaluator::tabulated(model, problem.grid)?,
        problem,
    };
    let traj = engine.trajectory(&decision.strategy, &decision.phi_t)?;
    let terminal_gap = gap(traj.m.last(), &problem.m_t);
    Ok(RegretResult {
        decision: decision.clone(),
        terminal_gap,
        alpha: euclidean(&decision.phi_t),
        feasible: true,
        start: 0,
        j: traj.j,
        m_flow: traj.m,
        mu_flow: traj.mu,
        phi_flow: traj.phi,
    })
}

/// Richardson estimate `(4/3)·|J_N − J_2N|` of the discretization error of
/// the regret of `decision` (resampled on the doubled grid).
pub fn discretization_error(model: &ModelSpec, problem: &PlanningProblem, decision: &Decision) -> Result<f64> {
    let coarse = regret_j(model, problem, decision)?;
    let fine_problem = problem.with_steps(2 * problem.grid.steps)?;
    let fine_decision = decision.resample(fine_problem.grid)?;
    let fine = regret_j(model, &fine_problem, &fine_decision)?;
    Ok(4.0 / 3.0 * (coarse.j - fine.j).abs())
}

#[cfg(test)]
mod tests;
