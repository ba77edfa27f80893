//! Augmented Lagrangian on `m(T) = mT` around a spectral Gauss–Newton
//! inner solver, with multi-start and an increasing-radius driver.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::adjoint::{RegretEngine, Trajectory};
use super::metric::strategy_metric;
use super::settings::{AlphaSchedule, OptimizerSettings};
use super::{check_decision, euclidean, gap, Decision, PlanningProblem, RegretResult};
use crate::dynamics::{Evaluator, RandomizedStrategy};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::normal;

/// Euclidean projection onto the probability simplex. Michelot's
/// iteration: the threshold only grows, and it is exact once the set of
/// entries above it stops changing.
pub fn project_simplex(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut theta = (v.iter().sum::<f64>() - 1.0) / v.len() as f64;
    loop {
        let (mut sum, mut count) = (0.0, 0usize);
        for x in v.iter() {
            if *x > theta {
                sum += x;
                count += 1;
            }
        }
        let next = (sum - 1.0) / count as f64;
        if next <= theta {
            break;
        }
        theta = next;
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Zero-mean part of `phi`, scaled radially into the ball of radius
/// `alpha`. The regret is invariant under adding constants to `φ_T`, so
/// nothing is lost by the gauge.
fn project_ball(phi: &mut [f64], alpha: f64) {
    let mean = phi.iter().sum::<f64>() / phi.len() as f64;
    phi.iter_mut().for_each(|v| *v -= mean);
    let norm = euclidean(phi);
    if norm > alpha {
        phi.iter_mut().for_each(|v| *v *= alpha / norm);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Optimization variables: the raw strategy weights and `φ_T`.
#[derive(Clone)]
struct Point {
    nu: RandomizedStrategy,
    phi: Vec<f64>,
}

/// A point with its trajectory and reduced constraint `c = m(T) − mT`
/// (the last component is dropped: masses always sum to one).
struct Evaluated {
    traj: Trajectory,
    c: Vec<f64>,
    merit: f64,
}

/// First-order data at an accepted point.
struct Linearized {
    /// `∂J/∂w`, `∂J/∂φ_T`.
    gw: Vec<f64>,
    gp: Vec<f64>,
    /// Rows of `∂c/∂w`.
    a: Vec<Vec<f64>>,
}

struct Solver<'e, 'a> {
    engine: &'e RegretEngine<'a>,
    settings: &'e OptimizerSettings,
    alpha: f64,
    /// States whose weights are optimized.
    active: Vec<bool>,
}

fn solve_small(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let r = b.len();
    for col in 0..r {
        let piv = (col..r).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..r {
            let f = m[row][col] / m[col][col];
            for k in col..r {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; r];
    for row in (0..r).rev() {
        let s: f64 = (row + 1..r).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    Some(x)
}

impl Solver<'_, '_> {
    fn rows(&self) -> usize {
        self.engine.problem.dim() - 1
    }

    fn blocks(&self, nu: &RandomizedStrategy) -> impl Iterator<Item = usize> + '_ {
        let d = nu.dim();
        (0..nu.grid().steps * d).filter(move |b| self.active[b % d])
    }

    fn project(&self, x: &mut Point) {
        let d = x.nu.dim();
        for n in 0..x.nu.grid().steps {
            for i in 0..d {
                let w = x.nu.weights_mut(n, i);
                if self.active[i] {
                    project_simplex(w);
                } else {
                    w.fill(0.0);
                    w[0] = 1.0;
                }
            }
        }
        project_ball(&mut x.phi, self.alpha);
    }

    fn evaluate(&self, x: &Point, lambda: &[f64], rho: f64) -> Result<Evaluated> {
        let traj = self.engine.trajectory(&x.nu, &x.phi)?;
        let c: Vec<f64> = traj
            .m
            .last()
            .iter()
            .zip(&self.engine.problem.m_t)
            .take(self.rows())
            .map(|(a, b)| a - b)
            .collect();
        let merit = traj.j + dot(lambda, &c) + 0.5 * rho * dot(&c, &c);
        Ok(Evaluated { traj, c, merit })
    }

    fn linearize(&self, x: &Point, e: &Evaluated) -> Result<Linearized> {
        let d = x.phi.len();
        let g = self.engine.gradient(&x.nu, &x.phi, &e.traj, &vec![0.0; d])?;
        let mut a = self.engine.terminal_jacobian(&x.nu, &e.traj, self.rows())?;
        let na = x.nu.n_actions();
        let mut gw = g.w;
        for (b, block) in gw.chunks_mut(na).enumerate() {
            if !self.active[b % d] {
                block.fill(0.0);
                for row in a.iter_mut() {
                    row[b * na..(b + 1) * na].fill(0.0);
                }
            }
        }
        Ok(Linearized { gw, gp: g.phi_t, a })
    }

    /// Step of the Gauss–Newton model of the augmented Lagrangian,
    /// `min ∇J·Δ + λ·(c + AΔ) + ρ/2 |c + AΔ|² + h/(2s) |Δ_w|² + 1/(2s) |Δ_φ|²`
    /// over feasible points, solved through its multiplier `μ` by a
    /// semismooth Newton iteration; each dual evaluation is one pass of
    /// per-block simplex projections.
    fn step(&self, x: &Point, e: &Evaluated, lin: &Linearized, lambda: &[f64], rho: f64, s: f64) -> Point {
        let r = lin.a.len();
        let h = x.nu.grid().step();
        let na = x.nu.n_actions();
        let mut y = x.clone();
        let mut phi = x.phi.clone();
        phi.iter_mut().zip(&lin.gp).for_each(|(p, g)| *p -= s * g);
        project_ball(&mut phi, self.alpha);
        y.phi = phi;

        let blocks: Vec<usize> = self.blocks(&x.nu).collect();
        let primal = |mu: &[f64], y: &mut RandomizedStrategy| {
            let raw = y.raw_mut();
            for &b in &blocks {
                let range = b * na..(b + 1) * na;
                let xb = &x.nu.raw()[range.clone()];
                let out = &mut raw[range.clone()];
                for k in 0..na {
                    let idx = b * na + k;
                    let mut g = lin.gw[idx];
                    for (row, m) in lin.a.iter().zip(mu) {
                        g += m * row[idx];
                    }
                    out[k] = xb[k] - s / h * g;
                }
                project_simplex(out);
            }
        };
        // ψ(μ) and its gradient c + AΔ − (μ − λ)/ρ
        let dual = |mu: &[f64], y: &RandomizedStrategy| -> (f64, Vec<f64>) {
            let mut lin_c = e.c.clone();
            let mut value = 0.0;
            let mut norm = 0.0;
            for &b in &blocks {
                for k in 0..na {
                    let idx = b * na + k;
                    let dlt = y.raw()[idx] - x.nu.raw()[idx];
                    if dlt == 0.0 {
                        continue;
                    }
                    value += lin.gw[idx] * dlt;
                    norm += dlt * dlt;
                    for (lc, row) in lin_c.iter_mut().zip(&lin.a) {
                        *lc += row[idx] * dlt;
                    }
                }
            }
            let grad: Vec<f64> = (0..r).map(|j| lin_c[j] - (mu[j] - lambda[j]) / rho).collect();
            let pen: f64 = (0..r).map(|j| (mu[j] - lambda[j]).powi(2)).sum::<f64>() / (2.0 * rho);
            (value + dot(mu, &lin_c) - pen + 0.5 * h / s * norm, grad)
        };

        let mut mu: Vec<f64> = (0..r).map(|j| lambda[j] + rho * e.c[j]).collect();
        primal(&mu, &mut y.nu);
        if r == 0 {
            return y;
        }
        let (mut psi, mut grad) = dual(&mu, &y.nu);
        // the linearized residual only has to be small next to the current one
        let tol = 1e-13 + 1e-3 * e.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut yt = y.nu.clone();
        for _ in 0..40 {
            if grad.iter().fold(0.0f64, |a, v| a.max(v.abs())) <= tol {
                break;
            }
            // −Hessian = (s/h) A P' Aᵀ + I/ρ, P' the projection Jacobian
            let mut hess = vec![vec![0.0; r]; r];
            for (j, row) in hess.iter_mut().enumerate() {
                row[j] = 1.0 / rho;
            }
            for &b in &blocks {
                let support: Vec<usize> = (b * na..(b + 1) * na).filter(|&idx| y.nu.raw()[idx] > 0.0).collect();
                if support.len() < 2 {
                    continue;
                }
                let sums: Vec<f64> = lin
                    .a
                    .iter()
                    .map(|row| support.iter().map(|&idx| row[idx]).sum())
                    .collect();
                let inv = 1.0 / support.len() as f64;
                for p in 0..r {
                    for q in p..r {
                        let cross: f64 = support.iter().map(|&idx| lin.a[p][idx] * lin.a[q][idx]).sum();
                        let v = s / h * (cross - sums[p] * sums[q] * inv);
                        hess[p][q] += v;
                        if p != q {
                            hess[q][p] += v;
                        }
                    }
                }
            }
            let Some(delta) = solve_small(hess, grad.clone()) else {
                break;
            };
            let slope = dot(&delta, &grad);
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let trial: Vec<f64> = mu.iter().zip(&delta).map(|(m, dl)| m + t * dl).collect();
                primal(&trial, &mut yt);
                let (pt, gt) = dual(&trial, &yt);
                if pt >= psi + 1e-4 * t * slope - 1e-15 * psi.abs() {
                    mu = trial;
                    std::mem::swap(&mut y.nu, &mut yt);
                    psi = pt;
                    grad = gt;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        y
    }

    fn merit_slope(&self, x: &Point, y: &Point, e: &Evaluated, lin: &Linearized, lambda: &[f64], rho: f64) -> f64 {
        let coef: Vec<f64> = lambda.iter().zip(&e.c).map(|(l, c)| l + rho * c).collect();
        let mut slope = 0.0;
        for (idx, (a, b)) in y.nu.raw().iter().zip(x.nu.raw()).enumerate() {
            let dlt = a - b;
            if dlt != 0.0 {
                let mut g = lin.gw[idx];
                for (row, k) in lin.a.iter().zip(&coef) {
                    g += k * row[idx];
                }
                slope += g * dlt;
            }
        }
        slope
            + y.phi
                .iter()
                .zip(&x.phi)
                .zip(&lin.gp)
                .map(|((a, b), g)| (a - b) * g)
                .sum::<f64>()
    }

    /// Nonmonotone spectral Gauss–Newton iterations on the augmented
    /// Lagrangian for fixed `(λ, ρ)`.
    fn inner(&self, x: &mut Point, lambda: &[f64], rho: f64) -> Result<Evaluated> {
        let st = self.settings;
        let h = x.nu.grid().step();
        let mut e = self.evaluate(x, lambda, rho)?;
        let mut lin = self.linearize(x, &e)?;
        let mut history: VecDeque<f64> = VecDeque::with_capacity(st.memory);
        history.push_back(e.merit);
        let scale = lin
            .gw
            .iter()
            .map(|g| g.abs() / h)
            .chain(lin.gp.iter().map(|g| g.abs()))
            .fold(0.0, f64::max);
        let mut s = if scale > 0.0 {
            (1.0 / scale).clamp(st.step_min, st.step_max)
        } else {
            1.0
        };
        for _ in 0..st.max_inner_iters {
            let y = self.step(x, &e, &lin, lambda, rho, s);
            let size =
                y.nu.raw()
                    .iter()
                    .zip(x.nu.raw())
                    .chain(y.phi.iter().zip(&x.phi))
                    .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            if size <= st.pg_tol {
                break;
            }
            let slope = self.merit_slope(x, &y, &e, &lin, lambda, rho);
            if !(slope < 0.0) {
                break;
            }
            let fmax = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut t = 1.0;
            let mut found = None;
            while t >= 1e-10 {
                let mut trial = x.clone();
                trial
                    .nu
                    .raw_mut()
                    .iter_mut()
                    .zip(y.nu.raw())
                    .zip(x.nu.raw())
                    .for_each(|((o, a), b)| *o = b + t * (a - b));
                trial
                    .phi
                    .iter_mut()
                    .zip(&y.phi)
                    .zip(&x.phi)
                    .for_each(|((o, a), b)| *o = b + t * (a - b));
                match self.evaluate(&trial, lambda, rho) {
                    Ok(te) if te.merit <= fmax + st.armijo * t * slope => {
                        found = Some((trial, te));
                        break;
                    }
                    Ok(te) => {
                        let denom = te.merit - e.merit - t * slope;
                        let q = if denom > 0.0 {
                            -0.5 * t * t * slope / denom
                        } else {
                            0.5 * t
                        };
                        t = q.clamp(0.1 * t, 0.5 * t);
                    }
                    Err(_) => t *= 0.1,
                }
            }
            let Some((xn, en)) = found else { break };
            let ln = self.linearize(&xn, &en)?;
            // curvature of J + λ·c along the step, metric diag(h, 1)
            let mut ss = 0.0;
            let mut sy = 0.0;
            for (idx, (a, b)) in xn.nu.raw().iter().zip(x.nu.raw()).enumerate() {
                let dlt = a - b;
                if dlt != 0.0 {
                    let mut dg = ln.gw[idx] - lin.gw[idx];
                    for ((r1, r0), l) in ln.a.iter().zip(&lin.a).zip(lambda) {
                        dg += l * (r1[idx] - r0[idx]);
                    }
                    ss += h * dlt * dlt;
                    sy += dlt * dg;
                }
            }
            for ((a, b), (g1, g0)) in xn.phi.iter().zip(&x.phi).zip(ln.gp.iter().zip(&lin.gp)) {
                ss += (a - b) * (a - b);
                sy += (a - b) * (g1 - g0);
            }
            s = if sy > 0.0 {
                (ss / sy).clamp(st.step_min, st.step_max)
            } else {
                (10.0 * s).min(st.step_max)
            };
            *x = xn;
            e = en;
            lin = ln;
            if history.len() == st.memory {
                let stalled = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - e.merit
                    <= st.opt_tol + st.stall_rel * e.merit.abs();
                if stalled {
                    break;
                }
                history.pop_front();
            }
            history.push_back(e.merit);
        }
        Ok(e)
    }

    /// One augmented-Lagrangian run from `x`; returns the best feasible
    /// iterate seen, or the last iterate when none was feasible.
    fn run(&self, mut x: Point) -> Result<(Point, Trajectory, bool)> {
        let st = self.settings;
        self.project(&mut x);
        let gap_of = |t: &Trajectory| gap(t.m.last(), &self.engine.problem.m_t);
        let mut lambda = vec![0.0; self.rows()];
        let mut rho = st.rho0;
        let first = self.engine.trajectory(&x.nu, &x.phi)?;
        let mut best: Option<(Point, Trajectory)> = None;
        if gap_of(&first) <= st.feasibility_tol {
            best = Some((x.clone(), first));
        }
        let mut last_c = f64::INFINITY;
        let mut last: Option<Trajectory> = None;
        for _ in 0..st.max_outer_iters {
            let e = self.inner(&mut x, &lambda, rho)?;
            let g = gap_of(&e.traj);
            let j = e.traj.j;
            let feasible = g <= st.feasibility_tol;
            if feasible && best.as_ref().is_none_or(|(_, t)| j < t.j) {
                best = Some((x.clone(), self.engine.trajectory(&x.nu, &x.phi)?));
            }
            // once feasible, the iterate solves the problem with the
            // constraint shifted by at most the tolerance; further outer
            // iterations only trade regret for a smaller gap
            let settled = feasible;
            for (l, c) in lambda.iter_mut().zip(&e.c) {
                *l += rho * c;
            }
            if g > 0.25 * last_c {
                rho = (rho * st.rho_growth).min(st.rho_max);
            }
            last_c = g;
            last = Some(e.traj);
            if settled {
                break;
            }
        }
        match best {
            Some((p, t)) => Ok((p, t, true)),
            None => {
                let t = match last {
                    Some(t) => t,
                    None => self.engine.trajectory(&x.nu, &x.phi)?,
                };
                Ok((x, t, false))
            }
        }
    }
}

/// Random initial decision: per state and per block of steps, a discretized
/// Gaussian bump over the actions with random center and width, plus a
/// random terminal payoff inside the ball.
fn random_start(problem: &PlanningProblem, n_actions: usize, alpha: f64, seed: u64, index: u64) -> Decision {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let d = problem.dim();
    let grid = problem.grid;
    let blocks = 8.min(grid.steps);
    let bumps: Vec<Vec<Vec<f64>>> = (0..blocks)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let center: f64 = rng.gen();
                    let width = 0.02 + 0.3 * rng.gen::<f64>();
                    let mut w: Vec<f64> = (0..n_actions)
                        .map(|k| {
                            let u = if n_actions > 1 {
                                k as f64 / (n_actions - 1) as f64
                            } else {
                                0.0
                            };
                            (-(u - center).powi(2) / (2.0 * width * width)).exp() + 1e-3
                        })
                        .collect();
                    let s: f64 = w.iter().sum();
                    w.iter_mut().for_each(|v| *v /= s);
                    w
                })
                .collect()
        })
        .collect();
    let strategy = RandomizedStrategy::from_fn(grid, d, n_actions, |n, i, w| {
        w.copy_from_slice(&bumps[n * blocks / grid.steps][i]);
    });
    let mut phi: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let radius = alpha * rng.gen::<f64>();
    let mean = phi.iter().sum::<f64>() / d as f64;
    phi.iter_mut().for_each(|v| *v -= mean);
    let norm = euclidean(&phi);
    if norm > 0.0 {
        phi.iter_mut().for_each(|v| *v *= radius / norm);
    }
    Decision { strategy, phi_t: phi }
}

/// Outcome of a finite-difference check of the adjoint gradient.
#[derive(Debug, Clone, serde::Serialize)]
pub struct GradientReport {
    /// `(adjoint, finite difference)` directional derivatives.
    pub pairs: Vec<(f64, f64)>,
    pub max_relative_error: f64,
    /// Directions discarded because the perturbation crossed an argmax tie.
    pub rerolled: usize,
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Compares directional derivatives of `J` from the adjoint with central
/// differences along `directions` random directions in the weights and
/// the terminal payoff. Directions whose perturbation changes a Bellman
/// argmax or triggers clipping are rerolled.
pub fn check_gradient(
    model: &ModelSpec,
    problem: &PlanningProblem,
    decision: &Decision,
    directions: usize,
    seed: u64,
) -> Result<GradientReport> {
    check_decision(model, problem, decision)?;
    let engine = RegretEngine {
        ev: Evaluator::tabulated(model, problem.grid)?,
        problem,
    };
    gradient_pairs(&engine, decision, directions, seed)
}

fn gradient_pairs(
    engine: &RegretEngine<'_>,
    decision: &Decision,
    directions: usize,
    seed: u64,
) -> Result<GradientReport> {
    let nu = &decision.strategy;
    let (d, na) = (nu.dim(), nu.n_actions());
    let free = engine.ev.model().action_free_states();
    let traj = engine.trajectory(nu, &decision.phi_t)?;
    let base_sig = engine.argmax_signature(&traj)?;
    let grad = engine.gradient(nu, &decision.phi_t, &traj, &vec![0.0; d])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-6;
    let mut pairs = Vec::new();
    let mut rerolled = 0;
    let max_attempts = 10 * directions + 10;
    let mut attempts = 0;
    while pairs.len() < directions {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::GradientCheck {
                adjoint: f64::NAN,
                finite_diff: f64::NAN,
            });
        }
        // zero-sum per block, never pushing a zero weight negative
        let mut dw = vec![0.0; nu.raw().len()];
        for (b, block) in dw.chunks_mut(na).enumerate() {
            if free[b % d] {
                continue;
            }
            let w = &nu.raw()[b * na..(b + 1) * na];
            let mut movable = 0;
            for (o, wk) in block.iter_mut().zip(w) {
                if *wk > 10.0 * eps {
                    *o = normal(&mut rng);
                    movable += 1;
                }
            }
            if movable > 0 {
                let mean = block.iter().sum::<f64>() / movable as f64;
                for (o, wk) in block.iter_mut().zip(w) {
                    if *wk > 10.0 * eps {
                        *o -= mean;
                    }
                }
            }
        }
        let dp: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let adjoint = dot(&grad.w, &dw) + dot(&grad.phi_t, &dp);
        let shifted = |sign: f64| -> Result<(f64, bool)> {
            let mut y = nu.clone();
            y.raw_mut().iter_mut().zip(&dw).for_each(|(w, v)| *w += sign * eps * v);
            let phi: Vec<f64> = decision
                .phi_t
                .iter()
                .zip(&dp)
                .map(|(p, v)| p + sign * eps * v)
                .collect();
            let t = engine.trajectory(&y, &phi)?;
            let clean = t.m.clipped.is_empty() && t.mu.clipped.is_empty() && engine.argmax_signature(&t)? == base_sig;
            Ok((t.j, clean))
        };
        let (jp, cp) = shifted(1.0)?;
        let (jm, cm) = shifted(-1.0)?;
        if !(cp && cm) {
            rerolled += 1;
            continue;
        }
        pairs.push((adjoint, (jp - jm) / (2.0 * eps)));
    }
    let max_relative_error = pairs.iter().map(|(a, f)| relative(*a, *f)).fold(0.0, f64::max);
    Ok(GradientReport {
        pairs,
        max_relative_error,
        rerolled,
    })
}

/// Tolerance of the gradient check run by the optimizer.
const GRADIENT_CHECK_TOL: f64 = 1e-4;

fn make_result(
    engine: &RegretEngine<'_>,
    point: Point,
    traj: Trajectory,
    alpha: f64,
    feasible: bool,
    start: usize,
) -> RegretResult {
    RegretResult {
        terminal_gap: gap(traj.m.last(), &engine.problem.m_t),
        decision: Decision {
            strategy: point.nu,
            phi_t: point.phi,
        },
        j: traj.j,
        m_flow: traj.m,
        mu_flow: traj.mu,
        phi_flow: traj.phi,
        alpha,
        feasible,
        start,
    }
}

/// Best result over the given initial decisions followed by
/// `settings.n_starts` random ones. Selection is lexicographic in
/// (feasible first, then `J` or, among infeasible runs, the terminal gap,
/// then start index). Infeasibility is reported through the flag.
pub fn solve_from(
    model: &ModelSpec,
    problem: &PlanningProblem,
    alpha: f64,
    settings: &OptimizerSettings,
    initial: &[Decision],
) -> Result<RegretResult> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ball radius must be positive, got {alpha}"
        )));
    }
    settings.check()?;
    problem.check_model(model)?;
    for dec in initial {
        check_decision(model, problem, dec)?;
    }
    let engine = RegretEngine {
        ev: Evaluator::tabulated(model, problem.grid)?,
        problem,
    };
    let na = model.actions.len();
    let solver = Solver {
        engine: &engine,
        settings,
        alpha,
        active: model.action_free_states().iter().map(|f| !f).collect(),
    };
    let total = initial.len() + settings.n_starts;
    let outcomes: Vec<Result<RegretResult>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let start = if idx < initial.len() {
                initial[idx].clone()
            } else {
                random_start(problem, na, alpha, settings.seed, idx as u64)
            };
            let mut point = Point {
                nu: start.strategy,
                phi: start.phi_t,
            };
            solver.project(&mut point);
            if settings.gradient_check {
                let probe = Decision {
                    strategy: point.nu.clone(),
                    phi_t: point.phi.clone(),
                };
                let report = gradient_pairs(&engine, &probe, 3, settings.seed ^ idx as u64)?;
                if report.max_relative_error > GRADIENT_CHECK_TOL {
                    let worst = report
                        .pairs
                        .iter()
                        .max_by(|a, b| relative(a.0, a.1).total_cmp(&relative(b.0, b.1)))
                        .copied()
                        .unwrap_or((f64::NAN, f64::NAN));
                    return Err(Error::GradientCheck {
                        adjoint: worst.0,
                        finite_diff: worst.1,
                    });
                }
            }
            let (p, t, feasible) = solver.run(point)?;
            Ok(make_result(&engine, p, t, alpha, feasible, idx))
        })
        .collect();
    let mut best: Option<RegretResult> = None;
    let mut first_err = None;
    for out in outcomes {
        match out {
            Ok(r) => {
                let better = match &best {
                    None => true,
                    Some(b) => match (r.feasible, b.feasible) {
                        (true, false) => true,
                        (false, true) => false,
                        (true, true) => r.j < b.j,
                        (false, false) => r.terminal_gap < b.terminal_gap,
                    },
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e @ Error::GradientCheck { .. }) => return Err(e),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => Err(Error::InvalidArgument("no starts to run".into())),
    }
}

/// Minimizes `J` subject to `‖m(T) − mT‖ ≤ feasibility_tol` and
/// `‖φ_T‖ ≤ alpha` from `settings.n_starts` random starts.
pub fn solve_constrained(
    model: &ModelSpec,
    problem: &PlanningProblem,
    alpha: f64,
    settings: &OptimizerSettings,
) -> Result<RegretResult> {
    let r = solve_from(model, problem, alpha, settings, &[])?;
    if !r.feasible {
        return Err(Error::Infeasible {
            tol: settings.feasibility_tol,
            best_gap: r.terminal_gap,
        });
    }
    Ok(r)
}

/// Results of a run over increasing radii.
#[derive(Debug, Clone)]
pub struct SequenceReport {
    pub results: Vec<RegretResult>,
    /// Metric distance between consecutive strategies.
    pub metric_gaps: Vec<f64>,
    /// Largest pairwise distance among the last (up to three) strategies.
    pub tail_diameter: f64,
    /// Whether the tail diameter is below the cluster tolerance.
    pub cauchy_tail: bool,
}

impl SequenceReport {
    pub fn final_strategy(&self) -> &RandomizedStrategy {
        &self.results.last().expect("nonempty schedule").decision.strategy
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "results": self.results.iter().map(|r| r.summary()).collect::<Vec<_>>(),
            "metric_gaps": self.metric_gaps,
            "tail_diameter": self.tail_diameter,
            "cauchy_tail": self.cauchy_tail,
        })
    }
}

/// Solves the ball-constrained problem for each radius of the schedule.
/// Each radius warm-starts from the previous result (which stays a
/// candidate, so the reported `J` never increases along the schedule) plus
/// fresh random starts.
pub fn minimal_regret_sequence(
    model: &ModelSpec,
    problem: &PlanningProblem,
    schedule: &AlphaSchedule,
    settings: &OptimizerSettings,
) -> Result<SequenceReport> {
    let mut results: Vec<RegretResult> = Vec::new();
    for (n, &alpha) in schedule.radii().iter().enumerate() {
        let mut s = settings.clone();
        s.seed = settings.seed.wrapping_add(1_000_003 * n as u64);
        let warm: Vec<Decision> = results.last().map(|r| vec![r.decision.clone()]).unwrap_or_default();
        let mut r = solve_from(model, problem, alpha, &s, &warm)?;
        if let Some(prev) = results.last() {
            if prev.feasible && (!r.feasible || prev.j < r.j) {
                r = RegretResult {
                    alpha,
                    start: 0,
                    ..prev.clone()
                };
            }
        }
        results.push(r);
    }
    let actions = model.actions.points();
    let metric = |a: &RegretResult, b: &RegretResult| {
        strategy_metric(
            &a.decision.strategy,
            &b.decision.strategy,
            actions,
            settings.metric_terms,
        )
    };
    let metric_gaps = results
        .windows(2)
        .map(|w| metric(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    let tail = &results[results.len().saturating_sub(3)..];
    let mut tail_diameter: f64 = 0.0;
    for a in 0..tail.len() {
        for b in a + 1..tail.len() {
            tail_diameter = tail_diameter.max(metric(&tail[a], &tail[b])?);
        }
    }
    Ok(SequenceReport {
        cauchy_tail: tail_diameter <= settings.cluster_tol,
        results,
        metric_gaps,
        tail_diameter,
    })
}
