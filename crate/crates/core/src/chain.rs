//! Monte Carlo simulation of the controlled Markov chain by uniformization.
//!
//! Used as an independent oracle for the ODE flows and payoffs: each step
//! gets a dominating rate `Λ_n`, virtual epochs arrive as a Poisson process
//! of that rate, and at every epoch an action is drawn from the strategy
//! and a jump is accepted with probability `Q_ij / Λ_n`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{DistributionFlow, Evaluator, Flow, RandomizedStrategy};
use crate::error::{Error, Result};
use crate::model::{check_simplex, ModelSpec};

/// Safety factor on the sampled maximal exit rate.
pub const DOMINATING_FACTOR: f64 = 1.05;
const CHUNK: usize = 1024;

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub initial_state: usize,
    pub jump_times: Vec<f64>,
    /// State entered at each jump, 1-based.
    pub states: Vec<usize>,
    pub running_payoff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainEstimate {
    /// Empirical state frequencies at every grid node.
    pub flow: DistributionFlow,
    pub payoff_mean: f64,
    pub payoff_se: f64,
    pub n_paths: usize,
    /// The first few trajectories, when requested.
    pub paths: Vec<PathSample>,
}

impl ChainEstimate {
    /// Largest `|empirical - reference| / (3·SE + slack)` over nodes and
    /// states; at most 1 means agreement within the tolerance.
    pub fn agreement_ratio(&self, reference: &DistributionFlow, slack: f64) -> f64 {
        let n = self.n_paths as f64;
        let mut worst: f64 = 0.0;
        for (emp, ode) in self.flow.values.iter().zip(&reference.values) {
            for (e, m) in emp.iter().zip(ode) {
                let p = m.clamp(0.0, 1.0);
                let tol = 3.0 * (p * (1.0 - p) / n).sqrt() + slack;
                worst = worst.max((e - m).abs() / tol);
            }
        }
        worst
    }

    /// CSV `path,time,state` of the kept trajectories; time 0 rows give the
    /// initial states.
    pub fn paths_csv(&self) -> String {
        let mut out = String::from("path,time,state\n");
        for (id, p) in self.paths.iter().enumerate() {
            let _ = writeln!(out, "{id},0,{}", p.initial_state);
            for (t, s) in p.jump_times.iter().zip(&p.states) {
                let _ = writeln!(out, "{id},{t:.17e},{s}");
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ChainOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Terminal reward added to each path's payoff.
    pub terminal: Option<Vec<f64>>,
    /// Number of leading trajectories to return in full.
    pub keep_paths: usize,
}

impl ChainOptions {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        ChainOptions {
            n_paths,
            seed,
            terminal: None,
            keep_paths: 0,
        }
    }
}

struct StepData {
    lambda: f64,
    /// Relaxed payoff at start, middle and end of the step, `[i][3]`.
    payoff: Vec<[f64; 3]>,
}

/// `∫_{s0}^{s1}` of the quadratic through `(0, a), (1/2, b), (1, c)`.
fn quad_integral(v: &[f64; 3], s0: f64, s1: f64) -> f64 {
    let f = |s: f64| {
        let s2 = s * s;
        let s3 = s2 * s;
        v[0] * (s - 1.5 * s2 + 2.0 / 3.0 * s3) + v[1] * (2.0 * s2 - 4.0 / 3.0 * s3) + v[2] * (2.0 / 3.0 * s3 - 0.5 * s2)
    };
    f(s1) - f(s0)
}

fn sample_index<R: Rng>(rng: &mut R, w: &[f64]) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in w.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = k;
            if r < acc {
                return k;
            }
        }
    }
    last
}

struct Sim<'a> {
    model: &'a ModelSpec,
    m_flow: &'a DistributionFlow,
    nu: &'a RandomizedStrategy,
    mu0: &'a [f64],
    steps: Vec<StepData>,
    terminal: Option<&'a [f64]>,
}

struct PathOut {
    nodes: Vec<usize>,
    payoff: f64,
    sample: Option<PathSample>,
}

impl Sim<'_> {
    fn path(&self, seed: u64, id: usize, keep: bool) -> Result<PathOut> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let grid = self.m_flow.grid;
        let h = grid.step();
        let d = self.model.dim;
        let actions = self.model.actions.points();
        let mut state = sample_index(&mut rng, self.mu0);
        let mut nodes = Vec::with_capacity(grid.steps + 1);
        nodes.push(state);
        let mut sample = keep.then(|| PathSample {
            initial_state: state + 1,
            jump_times: Vec::new(),
            states: Vec::new(),
            running_payoff: 0.0,
        });
        let mut payoff = 0.0;
        let mut row = vec![0.0; d];
        let mut m = vec![0.0; d];
        for (n, step) in self.steps.iter().enumerate() {
            let t0 = grid.node(n);
            let mut s = 0.0;
            loop {
                let next = if step.lambda > 0.0 {
                    s + -(1.0 - rng.gen::<f64>()).ln() / (step.lambda * h)
                } else {
                    f64::INFINITY
                };
                let stop = next.min(1.0);
                payoff += h * quad_integral(&step.payoff[state], s, stop);
                if next >= 1.0 {
                    break;
                }
                s = next;
                let t = t0 + s * h;
                for ((o, a), b) in m.iter_mut().zip(self.m_flow.at(n)).zip(self.m_flow.at(n + 1)) {
                    *o = (1.0 - s) * a + s * b;
                }
                let k = sample_index(&mut rng, self.nu.weights(n, state));
                self.model.eval_rate_row(state, t, &m, actions[k], &mut row)?;
                let exit: f64 = (0..d).filter(|&j| j != state).map(|j| row[j]).sum();
                if exit > step.lambda * (1.0 + 1e-12) {
                    return Err(Error::UnboundedRate(format!(
                        "exit rate {exit} of state {} at t = {t} exceeds the dominating rate {}",
                        state + 1,
                        step.lambda
                    )));
                }
                let r = rng.gen::<f64>() * step.lambda;
                let mut acc = 0.0;
                for j in (0..d).filter(|&j| j != state) {
                    acc += row[j];
                    if r < acc {
                        state = j;
                        if let Some(p) = sample.as_mut() {
                            p.jump_times.push(t);
                            p.states.push(j + 1);
                        }
                        break;
                    }
                }
            }
            nodes.push(state);
        }
        if let Some(sigma) = self.terminal {
            payoff += sigma[state];
        }
        if let Some(p) = sample.as_mut() {
            p.running_payoff = payoff;
        }
        Ok(PathOut { nodes, payoff, sample })
    }
}

/// Simulates `opts.n_paths` trajectories of the chain with generator
/// `Q(t, m(t), ν(t))`, initial law `μ0`, and returns the empirical flow
/// and the mean and standard error of the realized payoff. Results are
/// identical for any thread count.
pub fn simulate_paths_with(
    model: &ModelSpec,
    m_flow: &DistributionFlow,
    nu: &RandomizedStrategy,
    mu0: &[f64],
    opts: &ChainOptions,
) -> Result<ChainEstimate> {
    if opts.n_paths == 0 {
        return Err(Error::InvalidArgument("number of paths must be at least 1".into()));
    }
    check_simplex(mu0, model.dim, 1e-9, "mu0")?;
    nu.check_compatible(model)?;
    if nu.grid() != m_flow.grid {
        return Err(Error::GridMismatch("strategy and flow grids differ".into()));
    }
    if let Some(sigma) = &opts.terminal {
        if sigma.len() != model.dim {
            return Err(Error::Dimension(format!("terminal vector has {} entries", sigma.len())));
        }
    }
    let grid = m_flow.grid;
    let d = model.dim;
    let ev = Evaluator::live(model, grid);
    let mut scratch = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut steps = Vec::with_capacity(grid.steps);
    for n in 0..grid.steps {
        let w = nu.step_weights(n);
        let mut lam: f64 = 0.0;
        let mut payoff = vec![[0.0; 3]; d];
        for (c, p) in [2 * n, 2 * n + 1, 2 * n + 2].into_iter().enumerate() {
            m_flow.stage_value(p, &mut m);
            lam = lam.max(ev.max_exit_rate(p, &m, w, &mut scratch)?);
            let mut g = vec![0.0; d];
            ev.relaxed_payoff(p, &m, w, &mut g)?;
            for i in 0..d {
                payoff[i][c] = g[i];
            }
        }
        steps.push(StepData {
            lambda: DOMINATING_FACTOR * lam,
            payoff,
        });
    }
    let sim = Sim {
        model,
        m_flow,
        nu,
        mu0,
        steps,
        terminal: opts.terminal.as_deref(),
    };

    struct Chunk {
        counts: Vec<u64>,
        sum: f64,
        sumsq: f64,
        kept: Vec<PathSample>,
    }
    let n_chunks = opts.n_paths.div_ceil(CHUNK);
    let chunks: Vec<Result<Chunk>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = vec![0u64; (grid.steps + 1) * d];
            let (mut sum, mut sumsq) = (0.0, 0.0);
            let mut kept = Vec::new();
            for id in c * CHUNK..((c + 1) * CHUNK).min(opts.n_paths) {
                let out = sim.path(opts.seed, id, id < opts.keep_paths)?;
                for (n, s) in out.nodes.iter().enumerate() {
                    counts[n * d + s] += 1;
                }
                sum += out.payoff;
                sumsq += out.payoff * out.payoff;
                kept.extend(out.sample);
            }
            Ok(Chunk {
                counts,
                sum,
                sumsq,
                kept,
            })
        })
        .collect();

    let mut counts = vec![0u64; (grid.steps + 1) * d];
    let (mut sum, mut sumsq) = (0.0, 0.0);
    let mut paths = Vec::new();
    for c in chunks {
        let c = c?;
        counts.iter_mut().zip(&c.counts).for_each(|(a, b)| *a += b);
        sum += c.sum;
        sumsq += c.sumsq;
        paths.extend(c.kept);
    }
    let np = opts.n_paths as f64;
    let mean = sum / np;
    let var = if opts.n_paths > 1 {
        ((sumsq - np * mean * mean) / (np - 1.0)).max(0.0)
    } else {
        0.0
    };
    let values = counts
        .chunks(d)
        .map(|c| c.iter().map(|&x| x as f64 / np).collect())
        .collect();
    Ok(ChainEstimate {
        flow: Flow {
            grid,
            values,
            clipped: Vec::new(),
        },
        payoff_mean: mean,
        payoff_se: (var / np).sqrt(),
        n_paths: opts.n_paths,
        paths,
    })
}

/// [`simulate_paths_with`] without terminal reward or path retention.
pub fn simulate_paths(
    model: &ModelSpec,
    m_flow: &DistributionFlow,
    nu: &RandomizedStrategy,
    mu0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<ChainEstimate> {
    simulate_paths_with(model, m_flow, nu, mu0, &ChainOptions::new(n_paths, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{forward_linear, forward_nonlinear, TimeGrid};
    use crate::hamiltonian::payoff;
    use crate::model::builtin;

    fn utilde(grid: TimeGrid) -> RandomizedStrategy {
        let model = builtin::section4();
        RandomizedStrategy::from_piecewise(grid, 3, &model.actions, &[builtin::SECTION4_SWITCH], &[0.0, 1.0]).unwrap()
    }

    #[test]
    fn quadratic_integral_is_exact() {
        // q(s) = 1 + 2s + 3s^2 through its three sample values.
        let v = [1.0, 1.0 + 1.0 + 0.75, 6.0];
        let exact = |s: f64| s + s * s + s * s * s;
        assert!((quad_integral(&v, 0.2, 0.7) - (exact(0.7) - exact(0.2))).abs() < 1e-14);
    }

    #[test]
    fn frozen_chain_keeps_its_initial_sample() {
        let model = builtin::zero_rates(3);
        let grid = TimeGrid::new(10, 1.0).unwrap();
        let nu = RandomizedStrategy::uniform(grid, 3, 2);
        let m = Flow::constant(grid, &[0.2, 0.3, 0.5]);
        let est = simulate_paths(&model, &m, &nu, &[0.2, 0.3, 0.5], 4000, 7).unwrap();
        assert!(est.flow.values.iter().all(|v| v == est.flow.initial()));
        assert!(est.agreement_ratio(&m, 0.0) <= 1.0);
        assert_eq!(est.payoff_mean, 0.0);
    }

    #[test]
    fn steering_flow_within_three_standard_errors() {
        let model = builtin::section4();
        let grid = TimeGrid::new(300, 1.0).unwrap();
        let nu = utilde(grid);
        let m = forward_nonlinear(&model, &builtin::section4_m0(), &nu).unwrap();
        let est = simulate_paths(&model, &m, &nu, &builtin::section4_m0(), 20_000, 1).unwrap();
        assert!(est.agreement_ratio(&m, 0.0) <= 1.3, "{}", est.agreement_ratio(&m, 0.0));
        assert!(est.agreement_ratio(&m, 2e-3) <= 1.0);
    }

    #[test]
    fn weighted_initial_law_matches_linear_flow() {
        let model = builtin::section4();
        let grid = TimeGrid::new(200, 1.0).unwrap();
        let nu = utilde(grid);
        let m = forward_nonlinear(&model, &builtin::section4_m0(), &nu).unwrap();
        let mu0 = [1.0 / 3.0; 3];
        let mu = forward_linear(&model, &mu0, &m, &nu).unwrap();
        let est = simulate_paths(&model, &m, &nu, &mu0, 20_000, 2).unwrap();
        assert!(est.agreement_ratio(&mu, 2e-3) <= 1.0);
    }

    #[test]
    fn payoff_estimate_matches_closed_form() {
        let model = builtin::two_state();
        let grid = TimeGrid::new(200, 1.0).unwrap();
        let nu = RandomizedStrategy::dirac(grid, 2, 2, 1);
        let m = forward_nonlinear(&model, &[1.0, 0.0], &nu).unwrap();
        let mut opts = ChainOptions::new(20_000, 3);
        opts.terminal = Some(vec![0.0, 1.0]);
        let est = simulate_paths_with(&model, &m, &nu, &[1.0, 0.0], &opts).unwrap();
        let exact = 1.0 - (-1.0f64).exp();
        assert!(
            (est.payoff_mean - exact).abs() <= 3.0 * est.payoff_se,
            "{} ± {}",
            est.payoff_mean,
            est.payoff_se
        );
    }

    #[test]
    fn running_payoff_estimate_matches_quadrature() {
        let model = builtin::congestion();
        let grid = TimeGrid::new(100, 1.0).unwrap();
        let nu = RandomizedStrategy::uniform(grid, 3, model.actions.len());
        let m0 = [0.5, 0.3, 0.2];
        let m = forward_nonlinear(&model, &m0, &nu).unwrap();
        let sigma = [0.1, -0.2, 0.4];
        let mut opts = ChainOptions::new(20_000, 4);
        opts.terminal = Some(sigma.to_vec());
        let est = simulate_paths_with(&model, &m, &nu, &m0, &opts).unwrap();
        let ode = payoff(&model, &m0, &nu, &m, &sigma).unwrap();
        assert!(
            (est.payoff_mean - ode).abs() <= 3.0 * est.payoff_se,
            "{} vs {ode} ± {}",
            est.payoff_mean,
            est.payoff_se
        );
        assert!(est.agreement_ratio(&m, 2e-3) <= 1.0);
    }

    #[test]
    fn identical_seeds_give_identical_results() {
        let model = builtin::congestion();
        let grid = TimeGrid::new(20, 1.0).unwrap();
        let nu = RandomizedStrategy::uniform(grid, 3, model.actions.len());
        let m = forward_nonlinear(&model, &[0.5, 0.3, 0.2], &nu).unwrap();
        let mut opts = ChainOptions::new(3000, 9);
        opts.keep_paths = 5;
        let a = simulate_paths_with(&model, &m, &nu, &[0.5, 0.3, 0.2], &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate_paths_with(&model, &m, &nu, &[0.5, 0.3, 0.2], &opts).unwrap());
        assert_eq!(a.flow.values, b.flow.values);
        assert_eq!(a.payoff_mean.to_bits(), b.payoff_mean.to_bits());
        assert_eq!(a.paths, b.paths);
        assert_eq!(a.paths.len(), 5);
        for p in &a.paths {
            assert!(p.jump_times.windows(2).all(|w| w[0] < w[1]));
            let mut prev = p.initial_state;
            for &s in &p.states {
                assert_ne!(s, prev);
                prev = s;
            }
        }
        assert!(a.paths_csv().starts_with("path,time,state\n0,0,"));
    }

    #[test]
    fn bad_arguments_are_rejected() {
        let model = builtin::section4();
        let grid = TimeGrid::new(4, 1.0).unwrap();
        let nu = utilde(grid);
        let m = Flow::constant(grid, &[1.0, 0.0, 0.0]);
        assert!(simulate_paths(&model, &m, &nu, &[1.0, 0.0, 0.0], 0, 0).is_err());
        assert!(simulate_paths(&model, &m, &nu, &[0.5, 0.0, 0.0], 10, 0).is_err());
    }
}
