use super::*;
use crate::hamiltonian::greedy_strategy;
use crate::model::builtin;
use crate::rng::sample_simplex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn uniform_problem(model: &ModelSpec, steps: usize) -> PlanningProblem {
    let d = model.dim;
    let m0 = vec![1.0 / d as f64; d];
    PlanningProblem::new(m0.clone(), m0.clone(), m0, TimeGrid::new(steps, model.horizon).unwrap()).unwrap()
}

fn random_decision(model: &ModelSpec, grid: TimeGrid, rng: &mut ChaCha8Rng) -> Decision {
    let na = model.actions.len();
    let strategy = RandomizedStrategy::from_fn(grid, model.dim, na, |_, _, w| {
        let s = sample_simplex(rng, na);
        for (o, v) in w.iter_mut().zip(s) {
            *o = 0.5 * v + 0.5 / na as f64;
        }
    });
    let phi = sample_simplex(rng, model.dim).iter().map(|v| 3.0 * v - 1.0).collect();
    Decision::new(strategy, phi).unwrap()
}

#[test]
fn zero_model_has_zero_regret() {
    let model = builtin::zero_rates(3);
    let problem = uniform_problem(&model, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dec = random_decision(&model, problem.grid, &mut rng);
    let r = regret_j(&model, &problem, &dec).unwrap();
    assert!(r.j.abs() < 1e-14, "{}", r.j);
}

#[test]
fn steering_control_has_positive_regret() {
    let model = builtin::section4();
    let problem = PlanningProblem::section4(400);
    let nu = RandomizedStrategy::from_piecewise(problem.grid, 3, &model.actions, &[2.0 / 3.0], &[0.0, 1.0]).unwrap();
    let r = regret_j(&model, &problem, &Decision::new(nu, vec![0.0; 3]).unwrap()).unwrap();
    assert!(r.j > 0.01, "{}", r.j);
    assert!(r.terminal_gap < 1e-6);
}

#[test]
fn greedy_decision_has_small_regret() {
    for model in [builtin::section4(), builtin::congestion(), builtin::two_state()] {
        let problem = uniform_problem(&model, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut dec = random_decision(&model, problem.grid, &mut rng);
        // iterate the best response a few times on the population flow
        for _ in 0..3 {
            let r = regret_j(&model, &problem, &dec).unwrap();
            dec.strategy = greedy_strategy(&model, &r.m_flow, &r.phi_flow).unwrap();
        }
        let r = regret_j(&model, &problem, &dec).unwrap();
        assert!(r.j >= -1e-6, "{:?}: {}", model.name, r.j);
        let eps = discretization_error(&model, &problem, &dec).unwrap();
        assert!(r.j <= eps + 1e-3, "{:?}: J = {} eps = {}", model.name, r.j, eps);
    }
}

#[test]
fn adjoint_matches_finite_differences() {
    for model in [builtin::section4(), builtin::congestion(), builtin::two_state()] {
        let problem = uniform_problem(&model, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dec = random_decision(&model, problem.grid, &mut rng);
        let report = check_gradient(&model, &problem, &dec, 20, 11).unwrap();
        assert!(report.max_relative_error < 1e-5, "{:?}: {:?}", model.name, report);
    }
}

#[test]
fn problem_file_round_trip() {
    let grid = TimeGrid::new(10, 1.0).unwrap();
    let p = PlanningProblem::parse(
        "# start in state 1\nm0 = [1, 0, 0]\nmT = exp(-1/3), 1 - exp(-1/3), 0\n",
        grid,
    )
    .unwrap();
    assert_eq!(p.m0, vec![1.0, 0.0, 0.0]);
    assert!((p.m_t[0] - builtin::section4_target()[0]).abs() < 1e-15);
    assert_eq!(p.mu0, vec![1.0 / 3.0; 3]);
    assert!(PlanningProblem::parse("m0 = 1, 0\n", grid).is_err());
    assert!(PlanningProblem::parse("m0 = 1, 0\nmT = 1, 0, 0\n", grid).is_err());
    assert!(PlanningProblem::parse("m0 = 1, 0\nmT = 1, 0\nmu0 = 1, 0\n", grid).is_err());
    assert!(PlanningProblem::parse("m0 = 1, 0\nm0 = 1, 0\nmT = 1, 0\n", grid).is_err());
    assert!(PlanningProblem::parse("x = 1\n", grid).is_err());
}
