use serde::Serialize;

use crate::dynamics::{forward_nonlinear, DistributionFlow, ValueFlow};
use crate::error::Result;
use crate::hamiltonian::{backward_bellman, hamiltonian_maximands};
use crate::model::ModelSpec;
use crate::planning::{gap, Decision, PlanningProblem};

/// Weights at or below this count as outside the support.
pub const SUPPORT_TOL: f64 = 1e-10;

/// A supported action that is not a maximizer at either end of its step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArgmaxViolation {
    pub step: usize,
    /// 1-based state.
    pub state: usize,
    pub t_left: f64,
    pub t_right: f64,
    pub action: f64,
    pub weight: f64,
    /// `H_i − maximand(u)`, the smaller of the two step ends.
    pub shortfall: f64,
    pub m: Vec<f64>,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassicalReport {
    pub passed: bool,
    pub terminal_gap: f64,
    pub boundary_ok: bool,
    pub argmax_ok: bool,
    /// Largest shortfall, if any action violates the argmax condition.
    pub worst: Option<ArgmaxViolation>,
    /// Every violation, in step order.
    pub violations: Vec<ArgmaxViolation>,
    #[serde(skip)]
    pub m_flow: DistributionFlow,
    #[serde(skip)]
    pub phi_flow: ValueFlow,
}

impl ClassicalReport {
    /// Violations whose step overlaps `[lo, hi]`.
    pub fn violations_within(&self, lo: f64, hi: f64) -> impl Iterator<Item = &ArgmaxViolation> {
        self.violations
            .iter()
            .filter(move |v| v.t_right >= lo && v.t_left <= hi)
    }
}

/// Certifies a decision as a classical solution: rebuilds `m` from `m0`
/// and `φ` from `φ_T`, then checks `‖m(T) − mT‖ ≤ tol` and that every
/// supported action of step `n` is within `tol` of the Hamiltonian at
/// `t_n` or at `t_{n+1}`. Accepting either end lets a switch fall inside
/// the step.
pub fn check_classical(
    model: &ModelSpec,
    candidate: &Decision,
    problem: &PlanningProblem,
    tol: f64,
) -> Result<ClassicalReport> {
    problem.check_model(model)?;
    candidate.strategy.check_compatible(model)?;
    let nu = &candidate.strategy;
    let grid = nu.grid();
    let m_flow = forward_nonlinear(model, &problem.m0, nu)?;
    let phi_flow = backward_bellman(model, &m_flow, &candidate.phi_t)?;
    let terminal_gap = gap(m_flow.last(), &problem.m_t);
    let boundary_ok = terminal_gap <= tol;

    // shortfalls[n][i][k] = H_i(t_n) − maximand_k(t_n)
    let shortfalls: Vec<Vec<Vec<f64>>> = (0..=grid.steps)
        .map(|n| {
            let rows = hamiltonian_maximands(model, grid.node(n), m_flow.at(n), phi_flow.at(n))?;
            Ok(rows
                .into_iter()
                .map(|row| {
                    let h = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    row.iter().map(|v| h - v).collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let actions = model.actions.points();
    let mut violations = Vec::new();
    for n in 0..grid.steps {
        for i in 0..model.dim {
            for (k, &w) in nu.weights(n, i).iter().enumerate() {
                if w <= SUPPORT_TOL {
                    continue;
                }
                let short = shortfalls[n][i][k].min(shortfalls[n + 1][i][k]);
                if short > tol {
                    let at = if shortfalls[n][i][k] <= shortfalls[n + 1][i][k] {
                        n
                    } else {
                        n + 1
                    };
                    violations.push(ArgmaxViolation {
                        step: n,
                        state: i + 1,
                        t_left: grid.node(n),
                        t_right: grid.node(n + 1),
                        action: actions[k],
                        weight: w,
                        shortfall: short,
                        m: m_flow.at(at).to_vec(),
                        phi: phi_flow.at(at).to_vec(),
                    });
                }
            }
        }
    }
    let worst = violations
        .iter()
        .max_by(|a, b| a.shortfall.total_cmp(&b.shortfall))
        .cloned();
    let argmax_ok = violations.is_empty();
    Ok(ClassicalReport {
        passed: boundary_ok && argmax_ok,
        terminal_gap,
        boundary_ok,
        argmax_ok,
        worst,
        violations,
        m_flow,
        phi_flow,
    })
}
