//! Coordinate-wise Hamiltonian, backward Bellman integration and the
//! payoff of a fictitious player.

use crate::dynamics::{
    forward_linear_with, rk4_step, DistributionFlow, Evaluator, Flow, RandomizedStrategy, Rk4System, ValueFlow,
};
use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// `|φ|` beyond which the backward integration reports an overflow.
pub const OVERFLOW_BOUND: f64 = 1e12;

/// `Σ_j Q_ij(t, m, u_k) φ_j + g_i(t, m, u_k)` as `[state][action]`.
pub fn hamiltonian_maximands(model: &ModelSpec, t: f64, m: &[f64], phi: &[f64]) -> Result<Vec<Vec<f64>>> {
    let d = model.dim;
    if phi.len() != d || m.len() != d {
        return Err(Error::Dimension(format!("expected vectors of length {d}")));
    }
    let mut row = vec![0.0; d];
    let mut out = vec![Vec::with_capacity(model.actions.len()); d];
    for &u in model.actions.points() {
        for (i, o) in out.iter_mut().enumerate() {
            model.eval_rate_row(i, t, m, u, &mut row)?;
            let q: f64 = row.iter().zip(phi).map(|(a, b)| a * b).sum();
            o.push(q + model.payoff[i].eval_at(t, m, u)?);
        }
    }
    Ok(out)
}

/// `H_i(t, m, φ) = max_u [Σ_j Q_ij(t, m, u) φ_j + g_i(t, m, u)]` over the
/// action grid.
pub fn hamiltonian(model: &ModelSpec, t: f64, m: &[f64], phi: &[f64]) -> Result<Vec<f64>> {
    Ok(hamiltonian_maximands(model, t, m, phi)?
        .into_iter()
        .map(|v| v.into_iter().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Indices of the grid actions whose maximand is within `tol` of `H_i`,
/// ascending, per state.
pub fn argmax_indices(model: &ModelSpec, t: f64, m: &[f64], phi: &[f64], tol: f64) -> Result<Vec<Vec<usize>>> {
    Ok(hamiltonian_maximands(model, t, m, phi)?
        .into_iter()
        .map(|v| {
            let h = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (0..v.len()).filter(|&k| v[k] >= h - tol).collect()
        })
        .collect())
}

/// Grid actions whose maximand is within `tol` of `H_i`, per state, sorted.
pub fn argmax_set(model: &ModelSpec, t: f64, m: &[f64], phi: &[f64], tol: f64) -> Result<Vec<Vec<f64>>> {
    let u = model.actions.points();
    Ok(argmax_indices(model, t, m, phi, tol)?
        .into_iter()
        .map(|ks| ks.into_iter().map(|k| u[k]).collect())
        .collect())
}

/// One backward step of `dφ/dt = -H(t, m(t), φ)` from `t_{n+1}` to `t_n`,
/// written as a forward step in reversed time. Stage `0` is `t_{n+1}`.
pub(crate) struct BellmanStep<'e, 'a> {
    pub ev: &'e Evaluator<'a>,
    pub n: usize,
    pub m_left: &'e [f64],
    pub m_right: &'e [f64],
    /// Smallest maximizing action per stage and state.
    pub arg: [Vec<usize>; 4],
    /// Cotangents of `m_left`, `m_right`; accumulated by `vjp` when set.
    pub m_bar: Option<(Vec<f64>, Vec<f64>)>,
    mbuf: Vec<f64>,
    scratch: Vec<f64>,
    dq: Vec<f64>,
    dg: Vec<f64>,
}

impl<'e, 'a> BellmanStep<'e, 'a> {
    pub fn new(ev: &'e Evaluator<'a>, n: usize, m_left: &'e [f64], m_right: &'e [f64]) -> Self {
        let d = ev.dim();
        BellmanStep {
            ev,
            n,
            m_left,
            m_right,
            arg: std::array::from_fn(|_| vec![0; d]),
            m_bar: None,
            mbuf: vec![0.0; d],
            scratch: vec![0.0; d],
            dq: vec![0.0; d * d],
            dg: vec![0.0; d],
        }
    }

    fn stage(&mut self, stage: usize) -> usize {
        match stage {
            0 => self.mbuf.copy_from_slice(self.m_right),
            3 => self.mbuf.copy_from_slice(self.m_left),
            _ => {
                for ((o, a), b) in self.mbuf.iter_mut().zip(self.m_left).zip(self.m_right) {
                    *o = 0.5 * (a + b);
                }
            }
        }
        2 * self.n + 2 - stage.div_ceil(2)
    }
}

impl Rk4System for BellmanStep<'_, '_> {
    fn dim(&self) -> usize {
        self.ev.dim()
    }

    fn eval(&mut self, stage: usize, y: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.stage(stage);
        let mut arg = std::mem::take(&mut self.arg[stage]);
        self.ev
            .hamiltonian(p, &self.mbuf, y, out, &mut arg, &mut self.scratch)?;
        self.arg[stage] = arg;
        Ok(())
    }

    fn vjp(&mut self, stage: usize, y: &[f64], kbar: &[f64], out: &mut [f64]) -> Result<()> {
        let p = self.stage(stage);
        let d = self.ev.dim();
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut mstage = vec![0.0; d];
        let want_m = self.m_bar.is_some();
        for i in 0..d {
            let kb = kbar[i];
            if kb == 0.0 {
                continue;
            }
            let k = self.arg[stage][i];
            self.ev.rate_row(p, &self.mbuf, k, i, &mut self.scratch)?;
            for j in 0..d {
                out[j] += kb * self.scratch[j];
            }
            if want_m {
                if self.ev.rates_depend_on_m() {
                    self.ev.rate_row_dm(p, &self.mbuf, k, i, &mut self.dq)?;
                    for j in 0..d {
                        for l in 0..d {
                            mstage[l] += kb * y[j] * self.dq[j * d + l];
                        }
                    }
                }
                if self.ev.payoff_depends_on_m() {
                    self.ev.payoff_dm(p, &self.mbuf, k, i, &mut self.dg)?;
                    for l in 0..d {
                        mstage[l] += kb * self.dg[l];
                    }
                }
            }
        }
        if let Some((left, right)) = self.m_bar.as_mut() {
            let (wl, wr) = match stage {
                0 => (0.0, 1.0),
                3 => (1.0, 0.0),
                _ => (0.5, 0.5),
            };
            for l in 0..d {
                left[l] += wl * mstage[l];
                right[l] += wr * mstage[l];
            }
        }
        Ok(())
    }
}

fn check_flow(ev: &Evaluator<'_>, m_flow: &DistributionFlow) -> Result<()> {
    if m_flow.grid != ev.grid() {
        return Err(Error::GridMismatch(
            "distribution flow grid differs from evaluator grid".into(),
        ));
    }
    if m_flow.dim() != ev.dim() {
        return Err(Error::Dimension(format!(
            "flow has {} states, model {}",
            m_flow.dim(),
            ev.dim()
        )));
    }
    Ok(())
}

/// Backward Bellman flow on a prepared evaluator.
pub fn backward_bellman_with(ev: &Evaluator<'_>, m_flow: &DistributionFlow, phi_t: &[f64]) -> Result<ValueFlow> {
    check_flow(ev, m_flow)?;
    let grid = ev.grid();
    let d = ev.dim();
    if phi_t.len() != d || phi_t.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "terminal payoff must be a finite d-vector".into(),
        ));
    }
    let h = grid.step();
    let mut values = vec![Vec::new(); grid.steps + 1];
    values[grid.steps] = phi_t.to_vec();
    for n in (0..grid.steps).rev() {
        let mut sys = BellmanStep::new(ev, n, m_flow.at(n), m_flow.at(n + 1));
        let mut next = vec![0.0; d];
        rk4_step(&mut sys, h, &values[n + 1], &mut next)?;
        let big = next.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if !(big <= OVERFLOW_BOUND) {
            return Err(Error::Overflow { node: n, value: big });
        }
        values[n] = next;
    }
    Ok(Flow {
        grid,
        values,
        clipped: Vec::new(),
    })
}

/// `dφ/dt = -H(t, m(t), φ)`, `φ(T) = φ_T`, integrated backward by RK4 with
/// `m` interpolated linearly inside steps.
pub fn backward_bellman(model: &ModelSpec, m_flow: &DistributionFlow, phi_t: &[f64]) -> Result<ValueFlow> {
    let ev = Evaluator::tabulated(model, m_flow.grid)?;
    backward_bellman_with(&ev, m_flow, phi_t)
}

/// Trapezoid rule for `∫ μ(t)·g(t, m(t), ν(t)) dt`, using the step's
/// strategy at both ends of each step.
pub fn running_payoff_with(
    ev: &Evaluator<'_>,
    mu: &DistributionFlow,
    m_flow: &DistributionFlow,
    nu: &RandomizedStrategy,
) -> Result<f64> {
    let grid = ev.grid();
    let h = grid.step();
    let mut g = vec![0.0; ev.dim()];
    let mut total = 0.0;
    for n in 0..grid.steps {
        let w = nu.step_weights(n);
        for node in [n, n + 1] {
            ev.relaxed_payoff(2 * node, m_flow.at(node), w, &mut g)?;
            let v: f64 = mu.at(node).iter().zip(&g).map(|(a, b)| a * b).sum();
            total += 0.5 * h * v;
        }
    }
    Ok(total)
}

/// Payoff on a prepared evaluator.
pub fn payoff_with(
    ev: &Evaluator<'_>,
    mu0: &[f64],
    nu: &RandomizedStrategy,
    m_flow: &DistributionFlow,
    sigma: &[f64],
) -> Result<f64> {
    let mu = forward_linear_with(ev, mu0, m_flow, nu)?;
    let terminal: f64 = mu.last().iter().zip(sigma).map(|(a, b)| a * b).sum();
    Ok(terminal + running_payoff_with(ev, &mu, m_flow, nu)?)
}

/// Expected reward `μ(T)·σ + ∫ μ(t)·g(t, m(t), ν(t)) dt` of a player whose
/// initial state is distributed as `μ0`, in a population moving along
/// `m_flow`.
pub fn payoff(
    model: &ModelSpec,
    mu0: &[f64],
    nu: &RandomizedStrategy,
    m_flow: &DistributionFlow,
    sigma: &[f64],
) -> Result<f64> {
    if sigma.len() != model.dim {
        return Err(Error::Dimension(format!(
            "sigma has {} entries, expected {}",
            sigma.len(),
            model.dim
        )));
    }
    let ev = Evaluator::live(model, nu.grid());
    check_flow(&ev, m_flow)?;
    payoff_with(&ev, mu0, nu, m_flow, sigma)
}

/// Pure feedback playing, on each step, the smallest grid maximizer of
/// the Hamiltonian at the step midpoint, with `m` and `φ` interpolated
/// linearly.
pub fn greedy_strategy_with(
    ev: &Evaluator<'_>,
    m_flow: &DistributionFlow,
    phi: &ValueFlow,
) -> Result<RandomizedStrategy> {
    let grid = ev.grid();
    let (d, na) = (ev.dim(), ev.n_actions());
    let mut m = vec![0.0; d];
    let mut f = vec![0.0; d];
    let mut hv = vec![0.0; d];
    let mut arg = vec![0; d];
    let mut scratch = vec![0.0; d];
    let mut weights = vec![0.0; grid.steps * d * na];
    for n in 0..grid.steps {
        m_flow.stage_value(2 * n + 1, &mut m);
        phi.stage_value(2 * n + 1, &mut f);
        ev.hamiltonian(2 * n + 1, &m, &f, &mut hv, &mut arg, &mut scratch)?;
        for i in 0..d {
            weights[(n * d + i) * na + arg[i]] = 1.0;
        }
    }
    RandomizedStrategy::new(grid, d, na, weights)
}

/// See [`greedy_strategy_with`].
pub fn greedy_strategy(model: &ModelSpec, m_flow: &DistributionFlow, phi: &ValueFlow) -> Result<RandomizedStrategy> {
    let ev = Evaluator::tabulated(model, m_flow.grid)?;
    greedy_strategy_with(&ev, m_flow, phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{forward_nonlinear, TimeGrid};
    use crate::model::{builtin, parse_model};
    use crate::rng::sample_simplex;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn closed_form() -> f64 {
        1.0 - (-1.0f64).exp()
    }

    #[test]
    fn zero_model_has_zero_hamiltonian() {
        let z = builtin::zero_rates(3);
        assert_eq!(
            hamiltonian(&z, 0.3, &[0.2, 0.3, 0.5], &[1.0, -2.0, 3.0]).unwrap(),
            vec![0.0; 3]
        );
        let all = argmax_set(&z, 0.3, &[0.2, 0.3, 0.5], &[1.0, -2.0, 3.0], 0.0).unwrap();
        assert!(all.iter().all(|s| s == &vec![0.0, 1.0]));
    }

    #[test]
    fn section4_interior_maximizer() {
        let model = builtin::section4();
        let h = hamiltonian(&model, 0.1, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((h[0] - 0.25).abs() < 1e-15);
        assert_eq!(
            argmax_set(&model, 0.1, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], 0.0).unwrap()[0],
            vec![0.5]
        );
        // Absorbing row with zero payoff.
        assert_eq!(h[2], 0.0);
    }

    #[test]
    fn section4_boundary_maximizer() {
        let model = builtin::section4();
        let set = argmax_set(&model, 0.1, &[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0], 0.0).unwrap();
        assert_eq!(set[0], vec![1.0]);
        let every = argmax_set(&model, 0.1, &[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0], f64::INFINITY).unwrap();
        assert_eq!(every[0].len(), 101);
    }

    #[test]
    fn constant_value_without_dynamics() {
        let z = builtin::zero_rates(2);
        let grid = TimeGrid::new(10, 1.0).unwrap();
        let m = Flow::constant(grid, &[0.5, 0.5]);
        let phi = backward_bellman(&z, &m, &[3.0, -1.0]).unwrap();
        assert!(phi.values.iter().all(|v| v == &[3.0, -1.0]));
    }

    #[test]
    fn two_state_value_matches_closed_form() {
        let model = builtin::two_state();
        let grid = TimeGrid::new(2000, 1.0).unwrap();
        let m = Flow::constant(grid, &[1.0, 0.0]);
        let phi = backward_bellman(&model, &m, &[0.0, 1.0]).unwrap();
        assert!((phi.initial()[0] - closed_form()).abs() < 1e-6);
        assert_eq!(phi.initial()[1], 1.0);
    }

    #[test]
    fn payoff_of_frozen_chain_is_terminal_average() {
        let z = builtin::zero_rates(3);
        let grid = TimeGrid::new(5, 1.0).unwrap();
        let nu = RandomizedStrategy::uniform(grid, 3, 2);
        let m = Flow::constant(grid, &[0.2, 0.3, 0.5]);
        assert_eq!(payoff(&z, &[0.2, 0.3, 0.5], &nu, &m, &[0.0; 3]).unwrap(), 0.0);
        let p = payoff(&z, &[0.6, 0.2, 0.2], &nu, &m, &[1.0, 2.0, 4.0]).unwrap();
        assert!((p - (0.6 + 0.4 + 0.8)).abs() < 1e-15);
    }

    #[test]
    fn two_state_payoff_matches_value() {
        let model = builtin::two_state();
        let grid = TimeGrid::new(2000, 1.0).unwrap();
        let nu = RandomizedStrategy::dirac(grid, 2, 2, 1);
        let m = forward_nonlinear(&model, &[1.0, 0.0], &nu).unwrap();
        let p = payoff(&model, &[1.0, 0.0], &nu, &m, &[0.0, 1.0]).unwrap();
        assert!((p - closed_form()).abs() < 1e-9);
    }

    #[test]
    fn half_cost_feedback_is_clamped_gap() {
        let model = builtin::section4_half();
        for gap in [-0.5, 0.0, 0.3, 0.62, 1.0, 1.7] {
            let set = argmax_set(&model, 0.2, &[1.0, 0.0, 0.0], &[0.0, gap, 0.0], 1e-12).unwrap();
            let want = gap.clamp(0.0, 1.0);
            assert!(
                set[0].iter().all(|u| (u - want).abs() <= 0.005 + 1e-12),
                "{gap}: {:?}",
                set[0]
            );
        }
    }

    #[test]
    fn greedy_strategy_attains_the_value() {
        for model in [builtin::section4(), builtin::congestion()] {
            let d = model.dim;
            let mu0 = vec![1.0 / d as f64; d];
            let phi_t: Vec<f64> = (0..d).map(|i| 0.4 * i as f64).collect();
            let errs: Vec<f64> = [100, 200]
                .iter()
                .map(|&n| {
                    let grid = TimeGrid::new(n, 1.0).unwrap();
                    let nu = RandomizedStrategy::uniform(grid, d, model.actions.len());
                    let m = forward_nonlinear(&model, &mu0, &nu).unwrap();
                    let phi = backward_bellman(&model, &m, &phi_t).unwrap();
                    let best = greedy_strategy(&model, &m, &phi).unwrap();
                    let v: f64 = mu0.iter().zip(phi.initial()).map(|(a, b)| a * b).sum();
                    v - payoff(&model, &mu0, &best, &m, &phi_t).unwrap()
                })
                .collect();
            assert!(errs[0].abs() < 1e-3 && errs[1].abs() < errs[0].abs() / 2.0, "{errs:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hamiltonian_is_convex_in_phi(seed in any::<u64>()) {
            let model = builtin::congestion();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = sample_simplex(&mut rng, 3);
            let t = rng.gen::<f64>();
            let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let (ha, hb, hm) = (
                hamiltonian(&model, t, &m, &a).unwrap(),
                hamiltonian(&model, t, &m, &b).unwrap(),
                hamiltonian(&model, t, &m, &mid).unwrap(),
            );
            for i in 0..3 {
                prop_assert!(hm[i] <= 0.5 * (ha[i] + hb[i]) + 1e-12);
            }
        }

        #[test]
        fn refining_the_action_grid_never_lowers_h(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coarse = builtin::section4_with_grid(11);
            let fine = builtin::section4_with_grid(101);
            let t = rng.gen::<f64>();
            let phi: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let m = sample_simplex(&mut rng, 3);
            let hc = hamiltonian(&coarse, t, &m, &phi).unwrap();
            let hf = hamiltonian(&fine, t, &m, &phi).unwrap();
            for i in 0..3 {
                prop_assert!(hf[i] >= hc[i] - 1e-15);
            }
        }

        #[test]
        fn argmax_actions_attain_h(seed in any::<u64>()) {
            let model = builtin::congestion();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = sample_simplex(&mut rng, 3);
            let t = rng.gen::<f64>();
            let phi: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let h = hamiltonian(&model, t, &m, &phi).unwrap();
            let set = argmax_set(&model, t, &m, &phi, 0.0).unwrap();
            for i in 0..3 {
                prop_assert!(!set[i].is_empty());
                for &u in &set[i] {
                    let q = crate::model::eval_rates(&model, t, &m, u).unwrap();
                    let g = crate::model::eval_payoff(&model, t, &m, u).unwrap();
                    let v: f64 = q[i].iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>() + g[i];
                    prop_assert!((v - h[i]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn payoff_never_beats_the_value(seed in any::<u64>()) {
            let model = builtin::congestion();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = TimeGrid::new(60, 1.0).unwrap();
            let nu = RandomizedStrategy::from_fn(grid, 3, model.actions.len(), |_, _, w| {
                w.iter_mut().for_each(|v| *v = rng.gen::<f64>());
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
            });
            let mu0 = sample_simplex(&mut rng, 3);
            let m0 = sample_simplex(&mut rng, 3);
            let sigma: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = forward_nonlinear(&model, &m0, &nu).unwrap();
            let phi = backward_bellman(&model, &m, &sigma).unwrap();
            let v: f64 = mu0.iter().zip(phi.initial()).map(|(a, b)| a * b).sum();
            prop_assert!(payoff(&model, &mu0, &nu, &m, &sigma).unwrap() <= v + 1e-4);
        }
    }

    #[test]
    fn overflow_is_reported_with_its_node() {
        let model =
            parse_model("d = 2\nT = 1\nactions = [0]\nQ[1][2] = 1\nQ[1][1] = auto\ng[1] = 1e14\ng[2] = 0\n").unwrap();
        let grid = TimeGrid::new(10, 1.0).unwrap();
        let m = Flow::constant(grid, &[0.5, 0.5]);
        assert!(matches!(
            backward_bellman(&model, &m, &[0.0, 0.0]),
            Err(Error::Overflow { node: 9, .. })
        ));
    }
}
