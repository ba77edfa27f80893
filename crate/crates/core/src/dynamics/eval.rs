//! Grid-bound model evaluation.
//!
//! Every integrator in the crate samples the model at the `2N + 1` stage
//! times `t_p = p·h/2` of a [`TimeGrid`]. Entries that do not read the
//! distribution can be tabulated once per stage time and action; entries
//! that do are evaluated live and, where derivatives are needed, with dual
//! numbers.

use crate::error::{Error, Result};
use crate::model::{check_kolmogorov_row, Dual, Env, ModelSpec};

use super::TimeGrid;

struct Table {
    /// `[p][i][k][j]`, zero at live entries.
    rates: Vec<f64>,
    /// `[p][i][k]`, zero at live entries.
    payoff: Vec<f64>,
}

pub struct Evaluator<'a> {
    model: &'a ModelSpec,
    grid: TimeGrid,
    actions: Vec<f64>,
    d: usize,
    rate_live: Vec<bool>,
    payoff_live: Vec<bool>,
    row_live: Vec<bool>,
    any_rate_live: bool,
    any_payoff_live: bool,
    table: Option<Table>,
}

impl<'a> Evaluator<'a> {
    /// Evaluator that computes every entry on demand.
    pub fn live(model: &'a ModelSpec, grid: TimeGrid) -> Self {
        let d = model.dim;
        let rate_live: Vec<bool> = model.rates.iter().flatten().map(|e| e.depends_on_m()).collect();
        let payoff_live: Vec<bool> = model.payoff.iter().map(|e| e.depends_on_m()).collect();
        let row_live = (0..d)
            .map(|i| rate_live[i * d..(i + 1) * d].iter().any(|b| *b))
            .collect();
        Evaluator {
            model,
            grid,
            actions: model.actions.points().to_vec(),
            d,
            any_rate_live: rate_live.iter().any(|b| *b),
            any_payoff_live: payoff_live.iter().any(|b| *b),
            rate_live,
            payoff_live,
            row_live,
            table: None,
        }
    }

    /// Evaluator with the distribution-free entries tabulated for every
    /// stage time and action. Static rows are Kolmogorov-checked here.
    pub fn tabulated(model: &'a ModelSpec, grid: TimeGrid) -> Result<Self> {
        let mut ev = Self::live(model, grid);
        let (d, k) = (ev.d, ev.actions.len());
        let points = 2 * grid.steps + 1;
        let mut rates = vec![0.0; points * k * d * d];
        let mut payoff = vec![0.0; points * k * d];
        let rate_t: Vec<bool> = model.rates.iter().flatten().map(|e| e.depends_on_t()).collect();
        let payoff_t: Vec<bool> = model.payoff.iter().map(|e| e.depends_on_t()).collect();
        let m0 = vec![0.0; d];
        let per_p = d * k * d;
        for p in 0..points {
            let t = grid.stage_time(p);
            for (ka, &u) in ev.actions.iter().enumerate() {
                for i in 0..d {
                    let base = ((p * d + i) * k + ka) * d;
                    for j in 0..d {
                        let e = i * d + j;
                        if ev.rate_live[e] {
                            continue;
                        }
                        rates[base + j] = if p > 0 && !rate_t[e] {
                            rates[base + j - per_p]
                        } else {
                            model.rates[i][j].eval_at(t, &m0, u)?
                        };
                    }
                    let g = (p * d + i) * k + ka;
                    if !ev.payoff_live[i] {
                        payoff[g] = if p > 0 && !payoff_t[i] {
                            payoff[g - d * k]
                        } else {
                            model.payoff[i].eval_at(t, &m0, u)?
                        };
                    }
                    if !ev.row_live[i] {
                        check_kolmogorov_row(i, &rates[base..base + d], t, &m0, u)?;
                    }
                }
            }
        }
        ev.table = Some(Table { rates, payoff });
        Ok(ev)
    }

    pub fn model(&self) -> &ModelSpec {
        self.model
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn rates_depend_on_m(&self) -> bool {
        self.any_rate_live
    }

    pub fn payoff_depends_on_m(&self) -> bool {
        self.any_payoff_live
    }

    /// Table row for a static state, if tabulated.
    #[inline]
    fn static_row(&self, p: usize, k: usize, i: usize) -> Option<&[f64]> {
        self.static_block(p, i).map(|b| &b[k * self.d..(k + 1) * self.d])
    }

    /// Rows `Q_i(t_p, ·, u_k)` for all `k`, `[k][j]`, for a static state.
    #[inline]
    fn static_block(&self, p: usize, i: usize) -> Option<&[f64]> {
        match &self.table {
            Some(tab) if !self.row_live[i] => {
                let (d, na) = (self.d, self.actions.len());
                let base = (p * d + i) * na * d;
                Some(&tab.rates[base..base + na * d])
            }
            _ => None,
        }
    }

    #[inline]
    fn static_payoff(&self, p: usize, i: usize) -> Option<&[f64]> {
        match &self.table {
            Some(tab) if !self.payoff_live[i] => {
                let na = self.actions.len();
                let base = (p * self.d + i) * na;
                Some(&tab.payoff[base..base + na])
            }
            _ => None,
        }
    }

    /// `out[k] = Q_i(t_p, m, u_k)·v` for every action.
    pub fn rate_dots(
        &self,
        p: usize,
        m: &[f64],
        i: usize,
        v: &[f64],
        out: &mut [f64],
        scratch: &mut [f64],
    ) -> Result<()> {
        let d = self.d;
        if let Some(block) = self.static_block(p, i) {
            for (o, row) in out.iter_mut().zip(block.chunks_exact(d)) {
                *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
            }
            return Ok(());
        }
        for (k, o) in out.iter_mut().enumerate() {
            self.rate_row(p, m, k, i, scratch)?;
            *o = scratch.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    /// `out[k] = g_i(t_p, m, u_k)` for every action.
    pub fn payoff_row(&self, p: usize, m: &[f64], i: usize, out: &mut [f64]) -> Result<()> {
        if let Some(row) = self.static_payoff(p, i) {
            out.copy_from_slice(row);
            return Ok(());
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.payoff_entry(p, m, k, i)?;
        }
        Ok(())
    }

    /// Row `i` of `Q(t_p, m, u_k)` into `out`.
    pub fn rate_row(&self, p: usize, m: &[f64], k: usize, i: usize, out: &mut [f64]) -> Result<()> {
        if let Some(row) = self.static_row(p, k, i) {
            out.copy_from_slice(row);
            return Ok(());
        }
        let (d, na) = (self.d, self.actions.len());
        let t = self.grid.stage_time(p);
        let u = self.actions[k];
        for j in 0..d {
            let e = i * d + j;
            out[j] = match &self.table {
                Some(tab) if !self.rate_live[e] => tab.rates[((p * d + i) * na + k) * d + j],
                _ => self.model.rates[i][j].eval_at(t, m, u)?,
            };
        }
        check_kolmogorov_row(i, out, t, m, u)
    }

    /// `g_i(t_p, m, u_k)`.
    pub fn payoff_entry(&self, p: usize, m: &[f64], k: usize, i: usize) -> Result<f64> {
        match &self.table {
            Some(tab) if !self.payoff_live[i] => Ok(tab.payoff[(p * self.d + i) * self.actions.len() + k]),
            _ => self.model.payoff[i].eval_at(self.grid.stage_time(p), m, self.actions[k]),
        }
    }

    /// Relaxed rate matrix `Σ_k w_ik Q_i(t_p, m, u_k)` (row-major `d×d`).
    /// `w` holds one probability vector per state, `[i][k]`.
    pub fn relaxed_rates(&self, p: usize, m: &[f64], w: &[f64], out: &mut [f64], scratch: &mut [f64]) -> Result<()> {
        let (d, na) = (self.d, self.actions.len());
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            let orow = &mut out[i * d..(i + 1) * d];
            if let Some(block) = self.static_block(p, i) {
                for (wk, row) in w[i * na..(i + 1) * na].iter().zip(block.chunks_exact(d)) {
                    if *wk != 0.0 {
                        orow.iter_mut().zip(row).for_each(|(o, r)| *o += wk * r);
                    }
                }
                continue;
            }
            for k in 0..na {
                let wk = w[i * na + k];
                if wk == 0.0 {
                    continue;
                }
                let row = match self.static_row(p, k, i) {
                    Some(r) => r,
                    None => {
                        self.rate_row(p, m, k, i, scratch)?;
                        &*scratch
                    }
                };
                for j in 0..d {
                    orow[j] += wk * row[j];
                }
            }
        }
        Ok(())
    }

    /// Relaxed payoff `Σ_k w_ik g_i(t_p, m, u_k)`.
    pub fn relaxed_payoff(&self, p: usize, m: &[f64], w: &[f64], out: &mut [f64]) -> Result<()> {
        let na = self.actions.len();
        for (i, o) in out.iter_mut().enumerate() {
            let wi = &w[i * na..(i + 1) * na];
            if let Some(row) = self.static_payoff(p, i) {
                *o = wi.iter().zip(row).map(|(a, b)| a * b).sum();
                continue;
            }
            let mut acc = 0.0;
            for k in 0..na {
                let wk = w[i * na + k];
                if wk != 0.0 {
                    acc += wk * self.payoff_entry(p, m, k, i)?;
                }
            }
            *o = acc;
        }
        Ok(())
    }

    /// Per-state maximum over the action grid of `Q_i(u)·φ + g_i(u)`,
    /// with the smallest maximizing action index written to `arg`.
    pub fn hamiltonian(
        &self,
        p: usize,
        m: &[f64],
        phi: &[f64],
        h_out: &mut [f64],
        arg: &mut [usize],
        scratch: &mut [f64],
    ) -> Result<()> {
        let (d, na) = (self.d, self.actions.len());
        for i in 0..d {
            let mut best = f64::NEG_INFINITY;
            let mut best_k = 0;
            if let (Some(block), Some(pay)) = (self.static_block(p, i), self.static_payoff(p, i)) {
                for (k, (row, g)) in block.chunks_exact(d).zip(pay).enumerate() {
                    let v = g + row.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                h_out[i] = best;
                arg[i] = best_k;
                continue;
            }
            for k in 0..na {
                let row = match self.static_row(p, k, i) {
                    Some(r) => r,
                    None => {
                        self.rate_row(p, m, k, i, scratch)?;
                        &*scratch
                    }
                };
                let mut v = self.payoff_entry(p, m, k, i)?;
                for j in 0..d {
                    v += row[j] * phi[j];
                }
                if v > best {
                    best = v;
                    best_k = k;
                }
            }
            h_out[i] = best;
            arg[i] = best_k;
        }
        Ok(())
    }

    /// `∂Q_ij(t_p, m, u_k)/∂m_l` for row `i`, written as `out[j*d + l]`.
    /// Static entries contribute zero.
    pub fn rate_row_dm(&self, p: usize, m: &[f64], k: usize, i: usize, out: &mut [f64]) -> Result<()> {
        let d = self.d;
        out.iter_mut().for_each(|v| *v = 0.0);
        if !self.row_live[i] {
            return Ok(());
        }
        let t = Dual::new(self.grid.stage_time(p), 0.0);
        let u = Dual::new(self.actions[k], 0.0);
        let mut md: Vec<Dual> = m.iter().map(|&v| Dual::new(v, 0.0)).collect();
        for l in 0..d {
            md[l].eps = 1.0;
            let env = Env { t, m: &md, u };
            for j in 0..d {
                if self.rate_live[i * d + j] {
                    out[j * d + l] = self.model.rates[i][j].eval(&env)?.eps;
                }
            }
            md[l].eps = 0.0;
        }
        Ok(())
    }

    /// Gradient of `g_i(t_p, m, u_k)` in `m`.
    pub fn payoff_dm(&self, p: usize, m: &[f64], k: usize, i: usize, out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        if !self.payoff_live[i] {
            return Ok(());
        }
        let t = Dual::new(self.grid.stage_time(p), 0.0);
        let u = Dual::new(self.actions[k], 0.0);
        let mut md: Vec<Dual> = m.iter().map(|&v| Dual::new(v, 0.0)).collect();
        for l in 0..self.d {
            md[l].eps = 1.0;
            out[l] = self.model.payoff[i].eval(&Env { t, m: &md, u })?.eps;
            md[l].eps = 0.0;
        }
        Ok(())
    }

    /// Largest total exit rate `-Q_ii` over actions with positive weight at
    /// stage `p`; `w` as in [`relaxed_rates`](Self::relaxed_rates).
    pub fn max_exit_rate(&self, p: usize, m: &[f64], w: &[f64], scratch: &mut [f64]) -> Result<f64> {
        let (d, na) = (self.d, self.actions.len());
        let mut lam: f64 = 0.0;
        for i in 0..d {
            for k in 0..na {
                if w[i * na + k] == 0.0 {
                    continue;
                }
                self.rate_row(p, m, k, i, scratch)?;
                let exit: f64 = (0..d).filter(|&j| j != i).map(|j| scratch[j]).sum();
                lam = lam.max(exit);
            }
        }
        if !lam.is_finite() {
            return Err(Error::UnboundedRate(format!(
                "exit rate {lam} at t = {}",
                self.grid.stage_time(p)
            )));
        }
        Ok(lam)
    }
}
