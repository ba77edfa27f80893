//! Game models: action grids, rate and payoff expressions, and the text
//! format they are loaded from.

pub mod builtin;
pub mod expr;
mod parse;
mod validate;

pub use expr::{eval_const, parse_expr, Dual, Env, Expr, Symbols, Var};
pub use parse::{parse_model, serialize_model};
pub use validate::{validate_model, ValidationReport, ValidationWitness};

use serde::Serialize;

use crate::error::{Error, Result};

/// Absolute tolerance on row sums and off-diagonal signs of evaluated rate
/// matrices; scaled by the row magnitude when that exceeds one.
pub const KOLMOGOROV_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ActionSource {
    Explicit,
    Interval { lo: f64, hi: f64, count: usize },
}

/// Finite discretization of the compact action set. Points are stored in
/// ascending order; "smallest action" always means the first point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionGrid {
    points: Vec<f64>,
    source: ActionSource,
}

impl ActionGrid {
    pub fn explicit(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidModel("action grid is empty".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidModel("action grid has non-finite points".into()));
        }
        points.sort_by(f64::total_cmp);
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidModel("action grid points must be distinct".into()));
        }
        Ok(ActionGrid {
            points,
            source: ActionSource::Explicit,
        })
    }

    /// `count` uniform points on `[lo, hi]`, both endpoints included.
    pub fn interval(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidModel("interval grids need at least 2 points".into()));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidModel(format!("bad action interval [{lo}, {hi}]")));
        }
        let step = (hi - lo) / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|k| lo + step * k as f64).collect();
        points[count - 1] = hi;
        Ok(ActionGrid {
            points,
            source: ActionSource::Interval { lo, hi, count },
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn source(&self) -> &ActionSource {
        &self.source
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Index of the grid point closest to `u` (ties go to the smaller point).
    pub fn nearest(&self, u: f64) -> usize {
        let mut best = 0;
        for (k, p) in self.points.iter().enumerate() {
            if (p - u).abs() < (self.points[best] - u).abs() {
                best = k;
            }
        }
        best
    }
}

/// A continuous-time finite state mean field game.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: Option<String>,
    pub dim: usize,
    pub horizon: f64,
    pub actions: ActionGrid,
    /// `rates[i][j]` is the transition rate from state `i` to `j`.
    pub rates: Vec<Vec<Expr>>,
    /// Running payoff per state; in split form this is `g0 + g1`.
    pub payoff: Vec<Expr>,
    /// `(g0(t,u), g1(t,m))` when the model was declared in split form.
    pub split: Option<(Vec<Expr>, Vec<Expr>)>,
    /// Classical terminal payoff `sigma(m)`.
    pub terminal: Option<Vec<Expr>>,
}

/// Dense `d×d` matrix of evaluated rates.
pub type RateMatrix = Vec<Vec<f64>>;

impl ModelSpec {
    pub fn rates_depend_on_m(&self) -> bool {
        self.rates.iter().flatten().any(Expr::depends_on_m)
    }

    pub fn payoff_depends_on_m(&self) -> bool {
        self.payoff.iter().any(Expr::depends_on_m)
    }

    /// True when neither rates nor running payoff read the distribution.
    pub fn is_m_independent(&self) -> bool {
        !self.rates_depend_on_m() && !self.payoff_depends_on_m()
    }

    /// States whose rate row and running payoff never read the action.
    pub fn action_free_states(&self) -> Vec<bool> {
        (0..self.dim)
            .map(|i| !self.payoff[i].depends_on_u() && !self.rates[i].iter().any(Expr::depends_on_u))
            .collect()
    }

    pub fn check_distribution(&self, m: &[f64], what: &str) -> Result<()> {
        check_simplex(m, self.dim, 1e-9, what)
    }

    /// Evaluate one rate row at `(t, m, u)` into `out`, enforcing the
    /// Kolmogorov property.
    pub fn eval_rate_row(&self, i: usize, t: f64, m: &[f64], u: f64, out: &mut [f64]) -> Result<()> {
        for (j, e) in self.rates[i].iter().enumerate() {
            out[j] = e.eval_at(t, m, u)?;
        }
        check_kolmogorov_row(i, out, t, m, u)
    }
}

/// Checks zero row sum and nonnegative off-diagonals of one evaluated row.
pub(crate) fn check_kolmogorov_row(i: usize, row: &[f64], t: f64, m: &[f64], u: f64) -> Result<()> {
    let scale = row.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let tol = KOLMOGOROV_TOL * scale;
    let witness = |col: usize, value: f64| Error::Kolmogorov {
        row: i + 1,
        col: col + 1,
        value,
        t,
        m: m.to_vec(),
        u,
    };
    for (j, &v) in row.iter().enumerate() {
        if j != i && v < -tol {
            return Err(witness(j, v));
        }
    }
    let sum: f64 = row.iter().sum();
    if sum.abs() > tol {
        return Err(witness(i, sum));
    }
    Ok(())
}

pub(crate) fn check_simplex(m: &[f64], dim: usize, tol: f64, what: &str) -> Result<()> {
    if m.len() != dim {
        return Err(Error::Dimension(format!(
            "{what} has {} entries, expected {dim}",
            m.len()
        )));
    }
    if m.iter().any(|v| !v.is_finite() || *v < -tol) {
        return Err(Error::NotSimplex(format!("{what} = {m:?} has negative entries")));
    }
    let s: f64 = m.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::NotSimplex(format!("{what} = {m:?} sums to {s}")));
    }
    Ok(())
}

/// Rate matrix `Q(t, m, u)`.
pub fn eval_rates(model: &ModelSpec, t: f64, m: &[f64], u: f64) -> Result<RateMatrix> {
    let d = model.dim;
    let mut q = vec![vec![0.0; d]; d];
    for (i, row) in q.iter_mut().enumerate() {
        model.eval_rate_row(i, t, m, u, row)?;
    }
    Ok(q)
}

/// Running payoff vector `g(t, m, u)`.
pub fn eval_payoff(model: &ModelSpec, t: f64, m: &[f64], u: f64) -> Result<Vec<f64>> {
    model.payoff.iter().map(|e| e.eval_at(t, m, u)).collect()
}

/// Classical terminal payoff `sigma(m)`; errors when the model has none.
pub fn eval_terminal(model: &ModelSpec, m: &[f64]) -> Result<Vec<f64>> {
    let sigma = model
        .terminal
        .as_ref()
        .ok_or_else(|| Error::Precondition("model declares no terminal payoff sigma".into()))?;
    sigma.iter().map(|e| e.eval_at(0.0, m, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_grid_includes_endpoints() {
        let g = ActionGrid::interval(0.0, 1.0, 101).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g.min(), 0.0);
        assert_eq!(g.max(), 1.0);
        assert!((g.points()[50] - 0.5).abs() < 1e-15);
        assert!(ActionGrid::interval(0.0, 1.0, 1).is_err());
        assert!(ActionGrid::interval(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn explicit_grid_is_sorted_and_distinct() {
        let g = ActionGrid::explicit(vec![1.0, 0.0, 0.5]).unwrap();
        assert_eq!(g.points(), &[0.0, 0.5, 1.0]);
        assert!(ActionGrid::explicit(vec![]).is_err());
        assert!(ActionGrid::explicit(vec![0.0, 0.0]).is_err());
        assert_eq!(g.nearest(0.74), 1);
        assert_eq!(g.nearest(0.75), 1);
    }

    #[test]
    fn section4_rates_at_time_zero() {
        let model = builtin::section4();
        let q = eval_rates(&model, 0.0, &[1.0, 0.0, 0.0], 0.5).unwrap();
        let expect = [[-0.5, 0.5, 0.0], [0.0, -1.0, 1.0], [0.0, 0.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(q[i][j], expect[i][j], "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn zero_model_has_zero_rates() {
        let model = builtin::zero_rates(3);
        let q = eval_rates(&model, 0.4, &[0.2, 0.3, 0.5], 0.0).unwrap();
        assert!(q.iter().flatten().all(|v| *v == 0.0));
        let g = eval_payoff(&model, 0.4, &[0.2, 0.3, 0.5], 0.0).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn negative_off_diagonal_is_rejected() {
        let model =
            parse_model("d = 2\nT = 1\nactions = [0]\nQ[1][2] = -1\nQ[1][1] = auto\ng[1] = 0\ng[2] = 0\n").unwrap();
        match eval_rates(&model, 0.0, &[0.5, 0.5], 0.0) {
            Err(Error::Kolmogorov { row, col, .. }) => assert_eq!((row, col), (1, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn section4_payoff() {
        let model = builtin::section4();
        let g = eval_payoff(&model, 0.3, &[0.3, 0.3, 0.4], 0.8).unwrap();
        assert!((g[0] + 0.64).abs() < 1e-15);
        assert_eq!(&g[1..], &[0.0, 0.0]);
    }

    #[test]
    fn payoff_reads_distribution() {
        let model = parse_model("d = 2\nT = 1\nactions = [0, 1]\ng[1] = u*m2\ng[2] = 0\n").unwrap();
        let g = eval_payoff(&model, 0.0, &[0.5, 0.5], 1.0).unwrap();
        assert_eq!(g[0], 0.5);
    }
}
