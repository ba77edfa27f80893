//! Regret evaluation on a fixed grid together with its exact discrete
//! gradient with respect to the strategy weights and the terminal payoff.

use crate::dynamics::{
    forward_linear_with, forward_nonlinear_with, rk4_step, rk4_step_vjp, DistributionFlow, Evaluator,
    RandomizedStrategy, Rk4System, ValueFlow,
};
use crate::error::Result;
use crate::hamiltonian::{backward_bellman_with, running_payoff_with, BellmanStep};

use super::PlanningProblem;

/// Flows and value of one regret evaluation.
pub(crate) struct Trajectory {
    pub m: DistributionFlow,
    pub phi: ValueFlow,
    pub mu: DistributionFlow,
    pub j: f64,
}

/// Gradient of `J + c·m(T)` for a given terminal cotangent `c`.
pub(crate) struct Gradient {
    /// Same layout as the strategy weights, `[n][i][k]`.
    pub w: Vec<f64>,
    pub phi_t: Vec<f64>,
}

pub(crate) struct RegretEngine<'a> {
    pub ev: Evaluator<'a>,
    pub problem: &'a PlanningProblem,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> RegretEngine<'a> {
    pub fn trajectory(&self, nu: &RandomizedStrategy, phi_t: &[f64]) -> Result<Trajectory> {
        let p = self.problem;
        let m = forward_nonlinear_with(&self.ev, &p.m0, nu)?;
        let phi = backward_bellman_with(&self.ev, &m, phi_t)?;
        let mu = forward_linear_with(&self.ev, &p.mu0, &m, nu)?;
        let running = running_payoff_with(&self.ev, &mu, &m, nu)?;
        let j = dot(&p.mu0, phi.initial()) - dot(mu.last(), phi_t) - running;
        Ok(Trajectory { m, phi, mu, j })
    }

    /// Smallest maximizing action at every Bellman stage and state; two
    /// trajectories with equal signatures lie on the same smooth piece of
    /// the value map.
    pub fn argmax_signature(&self, traj: &Trajectory) -> Result<Vec<usize>> {
        let ev = &self.ev;
        let grid = ev.grid();
        let d = ev.dim();
        let mut out = Vec::with_capacity(grid.steps * 4 * d);
        let mut next = vec![0.0; d];
        for n in (0..grid.steps).rev() {
            let mut sys = BellmanStep::new(ev, n, traj.m.at(n), traj.m.at(n + 1));
            rk4_step(&mut sys, grid.step(), traj.phi.at(n + 1), &mut next)?;
            for a in &sys.arg {
                out.extend_from_slice(a);
            }
        }
        Ok(out)
    }

    /// Reverse sweep for `J + terminal_bar·m(T)`.
    pub fn gradient(
        &self,
        nu: &RandomizedStrategy,
        phi_t: &[f64],
        traj: &Trajectory,
        terminal_bar: &[f64],
    ) -> Result<Gradient> {
        let ev = &self.ev;
        let grid = ev.grid();
        let (d, na) = (ev.dim(), ev.n_actions());
        let steps = grid.steps;
        let h = grid.step();
        let mut w_bar = vec![0.0; steps * d * na];
        let mut m_bar = vec![vec![0.0; d]; steps + 1];
        let mut mu_bar = vec![vec![0.0; d]; steps + 1];

        // J = μ0·φ(0) - μ(T)·φ_T - Σ_n h/2 [μ_n·g_n + μ_{n+1}·g_{n+1}].
        let mut phi_t_bar: Vec<f64> = traj.mu.last().iter().map(|v| -v).collect();
        mu_bar[steps] = phi_t.iter().map(|v| -v).collect();
        m_bar[steps].copy_from_slice(terminal_bar);
        let mut dg = vec![0.0; d];
        let mut grow = vec![0.0; na];
        for n in 0..steps {
            let wn = nu.step_weights(n);
            for node in [n, n + 1] {
                let p = 2 * node;
                let (m, mu) = (traj.m.at(node), traj.mu.at(node));
                for i in 0..d {
                    ev.payoff_row(p, m, i, &mut grow)?;
                    let mut g_relaxed = 0.0;
                    let wb = &mut w_bar[(n * d + i) * na..(n * d + i + 1) * na];
                    for k in 0..na {
                        wb[k] -= 0.5 * h * mu[i] * grow[k];
                        g_relaxed += wn[i * na + k] * grow[k];
                    }
                    mu_bar[node][i] -= 0.5 * h * g_relaxed;
                    if ev.payoff_depends_on_m() {
                        for k in 0..na {
                            let wk = wn[i * na + k];
                            if wk == 0.0 {
                                continue;
                            }
                            ev.payoff_dm(p, m, k, i, &mut dg)?;
                            for l in 0..d {
                                m_bar[node][l] -= 0.5 * h * mu[i] * wk * dg[l];
                            }
                        }
                    }
                }
            }
        }

        // φ was integrated from t_N down to t_0; its cotangent runs upward.
        let mut phi_bar = self.problem.mu0.clone();
        for n in 0..steps {
            let mut sys = BellmanStep::new(ev, n, traj.m.at(n), traj.m.at(n + 1));
            sys.m_bar = Some((vec![0.0; d], vec![0.0; d]));
            let mut next = vec![0.0; d];
            rk4_step_vjp(&mut sys, h, traj.phi.at(n + 1), &phi_bar, &mut next)?;
            let (left, right) = sys.m_bar.take().unwrap();
            add(&mut m_bar[n], &left);
            add(&mut m_bar[n + 1], &right);
            phi_bar = next;
        }
        add(&mut phi_t_bar, &phi_bar);

        for n in (0..steps).rev() {
            let mut sys = KolmogorovAdjoint::new(ev, n, nu.step_weights(n), Some((traj.m.at(n), traj.m.at(n + 1))));
            let mut prev = mu_bar[n].clone();
            rk4_step_vjp(&mut sys, h, traj.mu.at(n), &mu_bar[n + 1], &mut prev)?;
            mu_bar[n] = prev;
            add(&mut m_bar[n], &sys.m_left_bar);
            add(&mut m_bar[n + 1], &sys.m_right_bar);
            add(&mut w_bar[n * d * na..(n + 1) * d * na], &sys.w_bar);
        }

        if m_bar.iter().flatten().any(|v| *v != 0.0) {
            self.m_sweep(nu, traj, m_bar, &mut w_bar)?;
        }
        Ok(Gradient {
            w: w_bar,
            phi_t: phi_t_bar,
        })
    }

    /// Pulls node cotangents of `m` back to the weights, adding into `w_bar`.
    fn m_sweep(
        &self,
        nu: &RandomizedStrategy,
        traj: &Trajectory,
        mut m_bar: Vec<Vec<f64>>,
        w_bar: &mut [f64],
    ) -> Result<()> {
        let ev = &self.ev;
        let (d, na) = (ev.dim(), ev.n_actions());
        let h = ev.grid().step();
        for n in (0..ev.grid().steps).rev() {
            let mut sys = KolmogorovAdjoint::new(ev, n, nu.step_weights(n), None);
            let mut prev = m_bar[n].clone();
            rk4_step_vjp(&mut sys, h, traj.m.at(n), &m_bar[n + 1], &mut prev)?;
            m_bar[n] = prev;
            add(&mut w_bar[n * d * na..(n + 1) * d * na], &sys.w_bar);
        }
        Ok(())
    }

    /// Gradients of the first `rows` components of `m(T)` in the weights.
    pub fn terminal_jacobian(&self, nu: &RandomizedStrategy, traj: &Trajectory, rows: usize) -> Result<Vec<Vec<f64>>> {
        let (d, steps) = (self.ev.dim(), self.ev.grid().steps);
        (0..rows)
            .map(|j| {
                let mut m_bar = vec![vec![0.0; d]; steps + 1];
                m_bar[steps][j] = 1.0;
                let mut w = vec![0.0; nu.raw().len()];
                self.m_sweep(nu, traj, m_bar, &mut w)?;
                Ok(w)
            })
            .collect()
    }
}

fn add(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

/// Transposable Kolmogorov step `dx/dt = x·Q(t, m, ν_n)`; `m` is the state
/// itself when `frozen` is `None`, else the interpolant of the given pair.
struct KolmogorovAdjoint<'e, 'a> {
    ev: &'e Evaluator<'a>,
    n: usize,
    w: &'e [f64],
    frozen: Option<(&'e [f64], &'e [f64])>,
    w_bar: Vec<f64>,
    m_left_bar: Vec<f64>,
    m_right_bar: Vec<f64>,
    q: [Vec<f64>; 4],
    mbuf: Vec<f64>,
    row: Vec<f64>,
    dots: Vec<f64>,
    dq: Vec<f64>,
}

impl<'e, 'a> KolmogorovAdjoint<'e, 'a> {
    fn new(ev: &'e Evaluator<'a>, n: usize, w: &'e [f64], frozen: Option<(&'e [f64], &'e [f64])>) -> Self {
        let (d, na) = (ev.dim(), ev.n_actions());
        KolmogorovAdjoint {
            ev,
            n,
            w,
            frozen,
            w_bar: vec![0.0; d * na],
            m_left_bar: vec![0.0; d],
            m_right_bar: vec![0.0; d],
            q: std::array::from_fn(|_| vec![0.0; d * d]),
            mbuf: vec![0.0; d],
            row: vec![0.0; d],
            dots: vec![0.0; na],
            dq: vec![0.0; d * d],
        }
    }

    fn stage_m(&mut self, stage: usize, y: &[f64]) -> usize {
        match self.frozen {
            None => self.mbuf.copy_from_slice(y),
            Some((a, b)) => match stage {
                0 => self.mbuf.copy_from_slice(a),
                3 => self.mbuf.copy_from_slice(b),
                _ => {
                    for ((o, x), z) in self.mbuf.iter_mut().zip(a).zip(b) {
                        *o = 0.5 * (x + z);
                    }
                }
            },
        }
        2 * self.n + stage.div_ceil(2)
    }
}

impl Rk4System for KolmogorovAdjoint<'_, '_> {
    fn dim(&self) -> usize {
        self.ev.dim()
    }

    fn eval(&mut self, stage: usize, y: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.stage_m(stage, y);
        let mut q = std::mem::take(&mut self.q[stage]);
        self.ev.relaxed_rates(p, &self.mbuf, self.w, &mut q, &mut self.row)?;
        let d = y.len();
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..d {
            for j in 0..d {
                out[j] += y[i] * q[i * d + j];
            }
        }
        self.q[stage] = q;
        Ok(())
    }

    fn vjp(&mut self, stage: usize, y: &[f64], kbar: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.stage_m(stage, y);
        let (d, na) = (self.ev.dim(), self.ev.n_actions());
        let q = &self.q[stage];
        for l in 0..d {
            out[l] = dot(&q[l * d..(l + 1) * d], kbar);
        }
        for i in 0..d {
            if y[i] == 0.0 {
                continue;
            }
            self.ev
                .rate_dots(p, &self.mbuf, i, kbar, &mut self.dots, &mut self.row)?;
            for (wb, v) in self.w_bar[i * na..(i + 1) * na].iter_mut().zip(&self.dots) {
                *wb += y[i] * v;
            }
        }
        if self.ev.rates_depend_on_m() {
            let mut mstage = vec![0.0; d];
            for i in 0..d {
                for k in 0..na {
                    let wk = self.w[i * na + k];
                    if wk == 0.0 || y[i] == 0.0 {
                        continue;
                    }
                    self.ev.rate_row_dm(p, &self.mbuf, k, i, &mut self.dq)?;
                    for j in 0..d {
                        let c = y[i] * wk * kbar[j];
                        if c != 0.0 {
                            for l in 0..d {
                                mstage[l] += c * self.dq[j * d + l];
                            }
                        }
                    }
                }
            }
            match self.frozen {
                None => add(out, &mstage),
                Some(_) => {
                    let (wl, wr) = match stage {
                        0 => (1.0, 0.0),
                        3 => (0.0, 1.0),
                        _ => (0.5, 0.5),
                    };
                    for l in 0..d {
                        self.m_left_bar[l] += wl * mstage[l];
                        self.m_right_bar[l] += wr * mstage[l];
                    }
                }
            }
        }
        Ok(())
    }
}
