use super::*;
use crate::model::{builtin, parse_model};
use proptest::prelude::*;

fn two_state_linear() -> ModelSpec {
    parse_model("d = 2\nT = 1\nactions = [0, 1]\nQ[1][2] = 1\nQ[1][1] = auto\ng[1] = 0\ng[2] = 0\n").unwrap()
}

fn utilde(grid: TimeGrid) -> RandomizedStrategy {
    let model = builtin::section4();
    RandomizedStrategy::from_piecewise(grid, 3, &model.actions, &[builtin::SECTION4_SWITCH], &[0.0, 1.0]).unwrap()
}

fn dirac(model: &ModelSpec, i: usize, k: usize) -> Vec<Vec<f64>> {
    (0..model.dim)
        .map(|j| {
            let mut w = vec![0.0; model.actions.len()];
            w[if j == i { k } else { 0 }] = 1.0;
            w
        })
        .collect()
}

#[test]
fn grid_nodes_and_stage_times_agree() {
    let g = TimeGrid::new(3, 1.0).unwrap();
    for n in 0..=3 {
        assert_eq!(g.node(n), g.stage_time(2 * n));
    }
    assert_eq!(g.node(3), 1.0);
    assert_eq!(g.step_containing(2.0 / 3.0), 2);
    assert!(TimeGrid::new(0, 1.0).is_err());
}

#[test]
fn relaxed_rates_at_a_dirac_are_the_action_rows() {
    let model = builtin::section4();
    let nu = dirac(&model, 0, 70);
    let q = relax_q(&model, 0.2, &[1.0, 0.0, 0.0], &nu).unwrap();
    let direct = crate::model::eval_rates(&model, 0.2, &[1.0, 0.0, 0.0], model.actions.points()[70]).unwrap();
    assert_eq!(q, direct);
}

#[test]
fn relaxed_rates_average_over_two_actions() {
    let model = builtin::section4();
    let mut nu = dirac(&model, 0, 0);
    nu[0][0] = 0.5;
    nu[0][100] = 0.5;
    let q = relax_q(&model, 0.0, &[1.0, 0.0, 0.0], &nu).unwrap();
    assert_eq!(q[0], vec![-0.5, 0.5, 0.0]);
    let g = relax_g(&model, 0.0, &[1.0, 0.0, 0.0], &nu).unwrap();
    assert_eq!(g[0], -0.5);
}

#[test]
fn relaxed_payoff_ignores_measure_when_action_free() {
    let model = parse_model("d = 1\nT = 1\nactions = [0, 1, 2]\ng[1] = t + 1\n").unwrap();
    let g = relax_g(&model, 0.5, &[1.0], &[vec![0.2, 0.3, 0.5]]).unwrap();
    assert_eq!(g, vec![1.5]);
    let z = builtin::zero_rates(3);
    let q = relax_q(&z, 0.5, &[0.2, 0.3, 0.5], &dirac(&z, 1, 1)).unwrap();
    assert!(q.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn relax_rejects_non_probability_weights() {
    let model = builtin::section4();
    let mut nu = dirac(&model, 0, 0);
    nu[1][0] = 0.5;
    assert!(relax_q(&model, 0.0, &[1.0, 0.0, 0.0], &nu).is_err());
}

#[test]
fn zero_rates_freeze_the_distribution() {
    let model = builtin::zero_rates(3);
    let grid = TimeGrid::new(10, 1.0).unwrap();
    let nu = RandomizedStrategy::uniform(grid, 3, 2);
    let m0 = [0.2, 0.3, 0.5];
    let m = forward_nonlinear(&model, &m0, &nu).unwrap();
    assert!(m.values.iter().all(|v| v == &m0));
    let mu = forward_linear(&model, &[0.6, 0.2, 0.2], &m, &nu).unwrap();
    assert!(mu.values.iter().all(|v| v == &[0.6, 0.2, 0.2]));
}

#[test]
fn steering_control_reaches_the_target() {
    let model = builtin::section4();
    let grid = TimeGrid::new(2000, 1.0).unwrap();
    let m = forward_nonlinear(&model, &builtin::section4_m0(), &utilde(grid)).unwrap();
    let target = builtin::section4_target();
    let err = m
        .last()
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn switch_step_carries_exact_time_fractions() {
    let grid = TimeGrid::new(400, 1.0).unwrap();
    let nu = utilde(grid);
    let n = grid.step_containing(2.0 / 3.0);
    let theta = (grid.node(n + 1) - 2.0 / 3.0) / grid.step();
    let w = nu.weights(n, 0);
    assert!((w[100] - theta).abs() < 1e-12 && (w[0] - (1.0 - theta)).abs() < 1e-12);
    assert_eq!(nu.weights(n - 1, 0)[0], 1.0);
    assert_eq!(nu.weights(n + 1, 0)[100], 1.0);
}

#[test]
fn constant_generator_matches_closed_form() {
    let model = two_state_linear();
    let grid = TimeGrid::new(200, 1.0).unwrap();
    let nu = RandomizedStrategy::dirac(grid, 2, 2, 0);
    let m = forward_nonlinear(&model, &[1.0, 0.0], &nu).unwrap();
    let e = (-1.0f64).exp();
    assert!((m.last()[0] - e).abs() < 1e-10);
    assert!((m.last()[1] - (1.0 - e)).abs() < 1e-10);
}

#[test]
fn linear_flow_reproduces_its_own_generator() {
    let model = builtin::section4();
    let grid = TimeGrid::new(2000, 1.0).unwrap();
    let nu = utilde(grid);
    let m = forward_nonlinear(&model, &builtin::section4_m0(), &nu).unwrap();
    let mu = forward_linear(&model, &builtin::section4_m0(), &m, &nu).unwrap();
    assert!(m.sup_distance(&mu) <= 1e-9, "{}", m.sup_distance(&mu));

    // With distribution-dependent rates the interpolated m differs from the
    // RK4 stage values; the gap is a discretization error.
    let model = builtin::congestion();
    let gap = |n: usize| {
        let grid = TimeGrid::new(n, 1.0).unwrap();
        let nu = RandomizedStrategy::uniform(grid, 3, model.actions.len());
        let m0 = [0.5, 0.3, 0.2];
        let m = forward_nonlinear(&model, &m0, &nu).unwrap();
        m.sup_distance(&forward_linear(&model, &m0, &m, &nu).unwrap())
    };
    let (a, b) = (gap(100), gap(1000));
    assert!(b < a / 50.0, "{a} {b}");
}

#[test]
fn fourth_order_convergence_on_a_smooth_model() {
    let model = builtin::congestion();
    let end = |n: usize| {
        let grid = TimeGrid::new(n, 1.0).unwrap();
        let nu = RandomizedStrategy::uniform(grid, 3, model.actions.len());
        forward_nonlinear(&model, &[0.5, 0.3, 0.2], &nu)
            .unwrap()
            .last()
            .to_vec()
    };
    let (a, b, c) = (end(5), end(10), end(20));
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let ratio = diff(&a, &b) / diff(&b, &c);
    assert!((8.0..=32.0).contains(&ratio), "{ratio}");
}

#[test]
fn tabulated_and_live_evaluators_agree() {
    for model in [builtin::section4(), builtin::congestion()] {
        let grid = TimeGrid::new(20, model.horizon).unwrap();
        let nu = RandomizedStrategy::uniform(grid, model.dim, model.actions.len());
        let m0 = vec![1.0 / model.dim as f64; model.dim];
        let live = forward_nonlinear(&model, &m0, &nu).unwrap();
        let ev = Evaluator::tabulated(&model, grid).unwrap();
        let tab = forward_nonlinear_with(&ev, &m0, &nu).unwrap();
        assert!(live.sup_distance(&tab) < 1e-15);
    }
}

#[test]
fn large_negative_components_are_errors() {
    let model =
        parse_model("d = 2\nT = 1\nactions = [0]\nQ[1][2] = 500\nQ[1][1] = auto\ng[1] = 0\ng[2] = 0\n").unwrap();
    let grid = TimeGrid::new(2, 1.0).unwrap();
    let nu = RandomizedStrategy::dirac(grid, 2, 1, 0);
    assert!(matches!(
        forward_nonlinear(&model, &[1.0, 0.0], &nu),
        Err(Error::Positivity { node: 1, .. })
    ));
}

#[test]
fn non_simplex_initial_distribution_is_rejected() {
    let model = builtin::section4();
    let grid = TimeGrid::new(4, 1.0).unwrap();
    assert!(forward_nonlinear(&model, &[0.5, 0.2, 0.2], &utilde(grid)).is_err());
}

#[test]
fn flow_csv_round_trip() {
    let model = builtin::congestion();
    let grid = TimeGrid::new(7, 1.0).unwrap();
    let nu = RandomizedStrategy::uniform(grid, 3, model.actions.len());
    let m = forward_nonlinear(&model, &[0.5, 0.3, 0.2], &nu).unwrap();
    let text = m.to_csv();
    assert!(text.starts_with("t,x1,x2,x3\n"));
    let back = Flow::from_csv(&text).unwrap();
    assert_eq!(back.values, m.values);
    assert_eq!(back.grid, m.grid);
}

#[test]
fn strategy_csv_round_trip() {
    let grid = TimeGrid::new(12, 1.0).unwrap();
    let nu = utilde(grid);
    let back = RandomizedStrategy::from_csv(&nu.to_csv(), grid, 3, 101).unwrap();
    assert_eq!(back, nu);
    assert!(RandomizedStrategy::from_csv("state,step,action_index,weight\n1,0,0,0.5\n", grid, 3, 101).is_err());
    assert!(RandomizedStrategy::from_csv("1,0,0\n", grid, 3, 101).is_err());
}

#[test]
fn canonical_form_pins_action_free_states() {
    let model = builtin::section4();
    let grid = TimeGrid::new(4, 1.0).unwrap();
    let mut nu = RandomizedStrategy::uniform(grid, 3, 101);
    nu.canonicalize(&model);
    assert_eq!(nu.weights(2, 1)[0], 1.0);
    assert_eq!(nu.weights(2, 2)[0], 1.0);
    assert!((nu.weights(2, 0)[0] - 1.0 / 101.0).abs() < 1e-15);
}

fn random_strategy(grid: TimeGrid, d: usize, k: usize, raw: &[f64]) -> RandomizedStrategy {
    let mut it = raw.iter().cycle();
    RandomizedStrategy::from_fn(grid, d, k, |_, _, w| {
        w.iter_mut().for_each(|v| *v = *it.next().unwrap());
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
    })
}

fn simplex(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_is_conserved_and_entries_stay_positive(
        raw in prop::collection::vec(0.01f64..1.0, 33),
        m0 in prop::collection::vec(0.01f64..1.0, 3),
    ) {
        let model = builtin::congestion();
        let grid = TimeGrid::new(16, 1.0).unwrap();
        let nu = random_strategy(grid, 3, model.actions.len(), &raw);
        let m = forward_nonlinear(&model, &simplex(&m0), &nu).unwrap();
        for v in &m.values {
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(v.iter().all(|x| *x > 0.0));
        }
        prop_assert!(m.clipped.is_empty());
    }

    #[test]
    fn linear_flow_is_linear_in_the_initial_weighting(
        raw in prop::collection::vec(0.0f64..1.0, 40),
        a in prop::collection::vec(0.01f64..1.0, 3),
        b in prop::collection::vec(0.01f64..1.0, 3),
        alpha in 0.0f64..1.0,
    ) {
        let model = builtin::section4();
        let grid = TimeGrid::new(12, 1.0).unwrap();
        let nu = random_strategy(grid, 3, 101, &raw.iter().map(|v| v + 1e-3).collect::<Vec<_>>());
        let m = forward_nonlinear(&model, &builtin::section4_m0(), &nu).unwrap();
        let (a, b) = (simplex(&a), simplex(&b));
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect();
        let fa = forward_linear(&model, &a, &m, &nu).unwrap();
        let fb = forward_linear(&model, &b, &m, &nu).unwrap();
        let fm = forward_linear(&model, &mix, &m, &nu).unwrap();
        for n in 0..=grid.steps {
            for j in 0..3 {
                let lin = alpha * fa.at(n)[j] + (1.0 - alpha) * fb.at(n)[j];
                prop_assert!((fm.at(n)[j] - lin).abs() <= 1e-9);
            }
        }
    }
}
