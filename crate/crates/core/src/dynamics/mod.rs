//! Time grids, randomized strategies and forward Kolmogorov flows.

mod eval;
mod integrate;

pub use eval::Evaluator;
pub use integrate::{rk4_step, rk4_step_vjp, Rk4System};

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_simplex, ActionGrid, ModelSpec, RateMatrix};

/// Components below this are clipped and the node is flagged.
pub const CLIP_THRESHOLD: f64 = 1e-9;
/// Components below this abort the integration.
pub const HARD_NEGATIVE: f64 = 1e-6;

/// Uniform partition `t_n = n·T/N` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub steps: usize,
    pub horizon: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("time grid needs at least one step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(TimeGrid { steps, horizon })
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.horizon / self.steps as f64
        }
    }

    /// Stage time `t_p = p·h/2`, `p = 0..=2N`; even `p` are nodes.
    pub fn stage_time(&self, p: usize) -> f64 {
        if p == 2 * self.steps {
            self.horizon
        } else {
            p as f64 * self.horizon / (2 * self.steps) as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.node(n)).collect()
    }

    /// Step `n` with `t ∈ [t_n, t_{n+1})`, clamped to the grid.
    pub fn step_containing(&self, t: f64) -> usize {
        let n = (t / self.step()).floor();
        if n < 0.0 {
            0
        } else {
            (n as usize).min(self.steps - 1)
        }
    }
}

/// Piecewise-constant randomized feedback: for every step and state a
/// probability vector over the action grid, stored as `[n][i][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedStrategy {
    grid: TimeGrid,
    dim: usize,
    n_actions: usize,
    weights: Vec<f64>,
}

impl RandomizedStrategy {
    pub fn new(grid: TimeGrid, dim: usize, n_actions: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.steps * dim * n_actions {
            return Err(Error::Dimension(format!(
                "strategy has {} weights, expected {}",
                weights.len(),
                grid.steps * dim * n_actions
            )));
        }
        let s = RandomizedStrategy {
            grid,
            dim,
            n_actions,
            weights,
        };
        s.validate(1e-12)?;
        Ok(s)
    }

    /// Every state plays action index `k` at every time.
    pub fn dirac(grid: TimeGrid, dim: usize, n_actions: usize, k: usize) -> Self {
        Self::from_fn(grid, dim, n_actions, |_, _, w| w[k] = 1.0)
    }

    pub fn uniform(grid: TimeGrid, dim: usize, n_actions: usize) -> Self {
        let v = 1.0 / n_actions as f64;
        Self::from_fn(grid, dim, n_actions, |_, _, w| w.fill(v))
    }

    /// Builds weights by calling `f(n, i, w)` on zeroed blocks.
    pub fn from_fn(grid: TimeGrid, dim: usize, n_actions: usize, mut f: impl FnMut(usize, usize, &mut [f64])) -> Self {
        let mut weights = vec![0.0; grid.steps * dim * n_actions];
        for n in 0..grid.steps {
            for i in 0..dim {
                let b = (n * dim + i) * n_actions;
                f(n, i, &mut weights[b..b + n_actions]);
            }
        }
        RandomizedStrategy {
            grid,
            dim,
            n_actions,
            weights,
        }
    }

    /// State-independent open-loop control that equals `values[j]` on
    /// `[breaks[j-1], breaks[j])` (with `breaks[-1] = 0`, last piece up to
    /// `T`). Each step carries the exact time fractions of the pieces it
    /// overlaps, each piece snapped to the nearest grid action.
    pub fn from_piecewise(
        grid: TimeGrid,
        dim: usize,
        actions: &ActionGrid,
        breaks: &[f64],
        values: &[f64],
    ) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(Error::InvalidArgument(
                "piecewise control needs one more value than breakpoints".into(),
            ));
        }
        if breaks.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("breakpoints must be nondecreasing".into()));
        }
        let h = grid.step();
        let ks: Vec<usize> = values.iter().map(|&v| actions.nearest(v)).collect();
        Ok(Self::from_fn(grid, dim, actions.len(), |n, _, w| {
            let (a, b) = (grid.node(n), grid.node(n + 1));
            let mut lo = a;
            for (j, &k) in ks.iter().enumerate() {
                let hi = if j < breaks.len() { breaks[j].clamp(a, b) } else { b };
                if hi > lo {
                    w[k] += (hi - lo) / h;
                    lo = hi;
                }
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
        }))
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn weights(&self, n: usize, i: usize) -> &[f64] {
        let b = (n * self.dim + i) * self.n_actions;
        &self.weights[b..b + self.n_actions]
    }

    pub fn weights_mut(&mut self, n: usize, i: usize) -> &mut [f64] {
        let b = (n * self.dim + i) * self.n_actions;
        &mut self.weights[b..b + self.n_actions]
    }

    /// All states' weights on step `n`, `[i][k]`.
    pub fn step_weights(&self, n: usize) -> &[f64] {
        let len = self.dim * self.n_actions;
        &self.weights[n * len..(n + 1) * len]
    }

    pub fn raw(&self) -> &[f64] {
        &self.weights
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        for n in 0..self.grid.steps {
            for i in 0..self.dim {
                let w = self.weights(n, i);
                let s: f64 = w.iter().sum();
                if w.iter().any(|v| !v.is_finite() || *v < -tol) || (s - 1.0).abs() > tol {
                    return Err(Error::NotSimplex(format!(
                        "strategy weights at step {n}, state {} sum to {s}",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_compatible(&self, model: &ModelSpec) -> Result<()> {
        if self.dim != model.dim || self.n_actions != model.actions.len() {
            return Err(Error::GridMismatch(format!(
                "strategy is {}x{} (states x actions), model is {}x{}",
                self.dim,
                self.n_actions,
                model.dim,
                model.actions.len()
            )));
        }
        Ok(())
    }

    /// Puts states whose rates and payoff ignore the action on a Dirac at
    /// the smallest action, so that equivalent strategies compare equal.
    pub fn canonicalize(&mut self, model: &ModelSpec) {
        for (i, free) in model.action_free_states().into_iter().enumerate() {
            if free {
                for n in 0..self.grid.steps {
                    let w = self.weights_mut(n, i);
                    w.fill(0.0);
                    w[0] = 1.0;
                }
            }
        }
    }

    /// `Σ_k w_k u_k` for state `i` on step `n`.
    pub fn mean_action(&self, n: usize, i: usize, actions: &[f64]) -> f64 {
        self.weights(n, i).iter().zip(actions).map(|(w, u)| w * u).sum()
    }

    /// CSV `state,step,action_index,weight` (state 1-based), nonzero
    /// weights only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,step,action_index,weight\n");
        for n in 0..self.grid.steps {
            for i in 0..self.dim {
                for (k, w) in self.weights(n, i).iter().enumerate() {
                    if *w != 0.0 {
                        let _ = writeln!(out, "{},{n},{k},{w:.17e}", i + 1);
                    }
                }
            }
        }
        out
    }

    /// Reads [`to_csv`](Self::to_csv) output. Missing entries are zero.
    pub fn from_csv(text: &str, grid: TimeGrid, dim: usize, n_actions: usize) -> Result<Self> {
        let mut weights = vec![0.0; grid.steps * dim * n_actions];
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (ln == 0 && line.starts_with("state")) {
                continue;
            }
            let bad = |msg: &str| Error::Parse(format!("strategy CSV line {}: {msg}", ln + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let i: usize = f[0].parse().map_err(|_| bad("bad state"))?;
            let n: usize = f[1].parse().map_err(|_| bad("bad step"))?;
            let k: usize = f[2].parse().map_err(|_| bad("bad action index"))?;
            let w: f64 = f[3].parse().map_err(|_| bad("bad weight"))?;
            if i == 0 || i > dim || n >= grid.steps || k >= n_actions {
                return Err(bad("index out of range"));
            }
            weights[(n * dim + i - 1) * n_actions + k] = w;
        }
        Self::new(grid, dim, n_actions, weights).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Node values of a vector-valued function of time. Used for both
/// distribution flows `m`, `μ` and value flows `φ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flow {
    pub grid: TimeGrid,
    pub values: Vec<Vec<f64>>,
    /// Nodes where a slightly negative component was clipped.
    pub clipped: Vec<usize>,
}

pub type DistributionFlow = Flow;
pub type ValueFlow = Flow;

impl Flow {
    pub fn constant(grid: TimeGrid, v: &[f64]) -> Self {
        Flow {
            grid,
            values: vec![v.to_vec(); grid.steps + 1],
            clipped: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn at(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    pub fn initial(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn last(&self) -> &[f64] {
        &self.values[self.grid.steps]
    }

    /// Value at stage time `p`; midpoints are linear interpolants.
    pub fn stage_value(&self, p: usize, out: &mut [f64]) {
        let n = p / 2;
        if p.is_multiple_of(2) {
            out.copy_from_slice(&self.values[n]);
        } else {
            for ((o, a), b) in out.iter_mut().zip(&self.values[n]).zip(&self.values[n + 1]) {
                *o = 0.5 * (a + b);
            }
        }
    }

    /// Largest componentwise difference over all nodes.
    pub fn sup_distance(&self, other: &Flow) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// CSV with header `t,x1..xd` and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for j in 1..=self.dim() {
            let _ = write!(out, ",x{j}");
        }
        out.push('\n');
        for (n, v) in self.values.iter().enumerate() {
            let _ = write!(out, "{:.16e}", self.grid.node(n));
            for x in v {
                let _ = write!(out, ",{x:.16e}");
            }
            out.push('\n');
        }
        out
    }

    /// Reads [`to_csv`](Self::to_csv) output; the grid is inferred from the
    /// row count and the last time stamp.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut times = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (ln == 0 && line.starts_with('t')) {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|_| Error::Parse(format!("flow CSV line {}: bad number", ln + 1)))?;
            if vals.len() < 2 {
                return Err(Error::Parse(format!("flow CSV line {}: expected t and values", ln + 1)));
            }
            if let Some(first) = rows.first().map(|r: &Vec<f64>| r.len()) {
                if first != vals.len() - 1 {
                    return Err(Error::Parse(format!("flow CSV line {}: ragged row", ln + 1)));
                }
            }
            times.push(vals[0]);
            rows.push(vals[1..].to_vec());
        }
        if rows.len() < 2 {
            return Err(Error::Parse("flow CSV needs at least two rows".into()));
        }
        let grid = TimeGrid::new(rows.len() - 1, *times.last().unwrap()).map_err(|e| Error::Parse(e.to_string()))?;
        for (n, t) in times.iter().enumerate() {
            if (t - grid.node(n)).abs() > 1e-9 * grid.horizon.max(1.0) {
                return Err(Error::Parse(format!("flow CSV time {t} is not on a uniform grid")));
            }
        }
        Ok(Flow {
            grid,
            values: rows,
            clipped: Vec::new(),
        })
    }
}

/// Applies the negative-component policy to one node value.
fn enforce_simplex(x: &mut [f64], node: usize, clipped: &mut Vec<usize>) -> Result<()> {
    let mut clip = false;
    for (i, v) in x.iter().enumerate() {
        if !v.is_finite() || *v < -HARD_NEGATIVE {
            return Err(Error::Positivity {
                node,
                state: i + 1,
                value: *v,
            });
        }
        clip |= *v < -CLIP_THRESHOLD;
    }
    if clip {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
        let s: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= s);
        clipped.push(node);
    }
    Ok(())
}

fn vec_mat(x: &[f64], q: &[f64], out: &mut [f64]) {
    let d = x.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..d {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for j in 0..d {
            out[j] += xi * q[i * d + j];
        }
    }
}

/// `dx/dt = x·Q(t, m, ν_n)` on step `n`, where `m` is either the state
/// itself or a linear interpolant of a given flow.
struct KolmogorovStep<'e, 'a> {
    ev: &'e Evaluator<'a>,
    n: usize,
    w: &'e [f64],
    frozen: Option<(&'e [f64], &'e [f64])>,
    q: Vec<f64>,
    mbuf: Vec<f64>,
    scratch: Vec<f64>,
}

impl Rk4System for KolmogorovStep<'_, '_> {
    fn dim(&self) -> usize {
        self.ev.dim()
    }

    fn eval(&mut self, stage: usize, y: &[f64], out: &mut [f64]) -> Result<()> {
        let p = 2 * self.n + stage.div_ceil(2);
        let m: &[f64] = match self.frozen {
            None => y,
            Some((a, b)) => {
                match stage {
                    0 => self.mbuf.copy_from_slice(a),
                    3 => self.mbuf.copy_from_slice(b),
                    _ => {
                        for ((o, x), z) in self.mbuf.iter_mut().zip(a).zip(b) {
                            *o = 0.5 * (x + z);
                        }
                    }
                }
                &self.mbuf
            }
        };
        self.ev.relaxed_rates(p, m, self.w, &mut self.q, &mut self.scratch)?;
        vec_mat(y, &self.q, out);
        Ok(())
    }

    fn vjp(&mut self, _: usize, _: &[f64], _: &[f64], _: &mut [f64]) -> Result<()> {
        Err(Error::Precondition(
            "forward Kolmogorov steps are not differentiated here".into(),
        ))
    }
}

fn check_strategy(ev: &Evaluator<'_>, nu: &RandomizedStrategy) -> Result<()> {
    nu.check_compatible(ev.model())?;
    if nu.grid() != ev.grid() {
        return Err(Error::GridMismatch(format!(
            "strategy grid {:?} differs from {:?}",
            nu.grid(),
            ev.grid()
        )));
    }
    Ok(())
}

/// Nonlinear forward flow on a prepared evaluator.
pub fn forward_nonlinear_with(ev: &Evaluator<'_>, m0: &[f64], nu: &RandomizedStrategy) -> Result<DistributionFlow> {
    check_strategy(ev, nu)?;
    ev.model().check_distribution(m0, "m0")?;
    integrate_forward(ev, m0, nu, None)
}

/// Linear forward flow on a prepared evaluator.
pub fn forward_linear_with(
    ev: &Evaluator<'_>,
    mu0: &[f64],
    m_flow: &DistributionFlow,
    nu: &RandomizedStrategy,
) -> Result<DistributionFlow> {
    check_strategy(ev, nu)?;
    ev.model().check_distribution(mu0, "mu0")?;
    if m_flow.grid != ev.grid() {
        return Err(Error::GridMismatch(
            "distribution flow and strategy grids differ".into(),
        ));
    }
    integrate_forward(ev, mu0, nu, Some(m_flow))
}

fn integrate_forward(
    ev: &Evaluator<'_>,
    x0: &[f64],
    nu: &RandomizedStrategy,
    m_flow: Option<&DistributionFlow>,
) -> Result<DistributionFlow> {
    let d = ev.dim();
    let grid = ev.grid();
    let h = grid.step();
    let mut values = Vec::with_capacity(grid.steps + 1);
    values.push(x0.to_vec());
    let mut clipped = Vec::new();
    for n in 0..grid.steps {
        let mut sys = KolmogorovStep {
            ev,
            n,
            w: nu.step_weights(n),
            frozen: m_flow.map(|f| (f.at(n), f.at(n + 1))),
            q: vec![0.0; d * d],
            mbuf: vec![0.0; d],
            scratch: vec![0.0; d],
        };
        let mut next = vec![0.0; d];
        rk4_step(&mut sys, h, &values[n], &mut next)?;
        enforce_simplex(&mut next, n + 1, &mut clipped)?;
        values.push(next);
    }
    Ok(Flow { grid, values, clipped })
}

/// `dm/dt = m·Q(t, m, ν(t))`, `m(0) = m0`, by classical RK4 with the
/// strategy frozen on each step.
pub fn forward_nonlinear(model: &ModelSpec, m0: &[f64], nu: &RandomizedStrategy) -> Result<DistributionFlow> {
    forward_nonlinear_with(&Evaluator::live(model, nu.grid()), m0, nu)
}

/// `dμ/dt = μ·Q(t, m(t), ν(t))`, `μ(0) = μ0`, with `m` interpolated
/// linearly inside steps.
pub fn forward_linear(
    model: &ModelSpec,
    mu0: &[f64],
    m_flow: &DistributionFlow,
    nu: &RandomizedStrategy,
) -> Result<DistributionFlow> {
    forward_linear_with(&Evaluator::live(model, nu.grid()), mu0, m_flow, nu)
}

fn check_measures(model: &ModelSpec, nu: &[Vec<f64>]) -> Result<()> {
    if nu.len() != model.dim {
        return Err(Error::Dimension(format!(
            "{} measures for {} states",
            nu.len(),
            model.dim
        )));
    }
    for (i, w) in nu.iter().enumerate() {
        if w.len() != model.actions.len() {
            return Err(Error::Dimension(format!(
                "measure for state {} has {} weights, grid has {}",
                i + 1,
                w.len(),
                model.actions.len()
            )));
        }
        check_simplex(w, w.len(), 1e-12, &format!("measure for state {}", i + 1))?;
    }
    Ok(())
}

/// Relaxed rate matrix: row `i` is `Σ_k ν_i[k]·Q_i(t, m, u_k)`.
pub fn relax_q(model: &ModelSpec, t: f64, m: &[f64], nu: &[Vec<f64>]) -> Result<RateMatrix> {
    check_measures(model, nu)?;
    let d = model.dim;
    let mut out = vec![vec![0.0; d]; d];
    let mut row = vec![0.0; d];
    for (i, o) in out.iter_mut().enumerate() {
        for (k, &u) in model.actions.points().iter().enumerate() {
            let w = nu[i][k];
            if w == 0.0 {
                continue;
            }
            model.eval_rate_row(i, t, m, u, &mut row)?;
            o.iter_mut().zip(&row).for_each(|(o, r)| *o += w * r);
        }
    }
    Ok(out)
}

/// Relaxed running payoff `g_i = Σ_k ν_i[k]·g_i(t, m, u_k)`.
pub fn relax_g(model: &ModelSpec, t: f64, m: &[f64], nu: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_measures(model, nu)?;
    let mut out = vec![0.0; model.dim];
    for (i, o) in out.iter_mut().enumerate() {
        for (k, &u) in model.actions.points().iter().enumerate() {
            if nu[i][k] != 0.0 {
                *o += nu[i][k] * model.payoff[i].eval_at(t, m, u)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
