use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::planning::{solve_constrained, strategy_metric, OptimizerSettings, PlanningProblem, RegretResult};

#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub j: f64,
    pub terminal_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub outcomes: Vec<SeedOutcome>,
    /// Largest pairwise sup-node distance between population flows.
    pub m_dispersion: f64,
    /// Same for value flows.
    pub phi_dispersion: f64,
    /// Largest pairwise strategy-metric distance.
    pub strategy_dispersion: f64,
    #[serde(skip)]
    pub results: Vec<RegretResult>,
}

/// Solves the constrained problem once per seed (`settings.seed`,
/// `settings.seed + 1`, …) and measures how far the answers spread.
pub fn uniqueness_probe(
    model: &ModelSpec,
    problem: &PlanningProblem,
    alpha: f64,
    n_seeds: usize,
    settings: &OptimizerSettings,
) -> Result<UniquenessReport> {
    if n_seeds == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let results = (0..n_seeds as u64)
        .map(|s| {
            let mut st = settings.clone();
            st.seed = settings.seed.wrapping_add(s);
            solve_constrained(model, problem, alpha, &st)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut m_dispersion, mut phi_dispersion, mut strategy_dispersion): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for a in 0..results.len() {
        for b in a + 1..results.len() {
            let (ra, rb) = (&results[a], &results[b]);
            m_dispersion = m_dispersion.max(ra.m_flow.sup_distance(&rb.m_flow));
            phi_dispersion = phi_dispersion.max(ra.phi_flow.sup_distance(&rb.phi_flow));
            let mut na = ra.decision.strategy.clone();
            let mut nb = rb.decision.strategy.clone();
            na.canonicalize(model);
            nb.canonicalize(model);
            strategy_dispersion = strategy_dispersion.max(strategy_metric(
                &na,
                &nb,
                model.actions.points(),
                settings.metric_terms,
            )?);
        }
    }
    Ok(UniquenessReport {
        outcomes: results
            .iter()
            .enumerate()
            .map(|(s, r)| SeedOutcome {
                seed: settings.seed.wrapping_add(s as u64),
                j: r.j,
                terminal_gap: r.terminal_gap,
            })
            .collect(),
        m_dispersion,
        phi_dispersion,
        strategy_dispersion,
        results,
    })
}
