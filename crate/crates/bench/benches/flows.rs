use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfg_planning::builtin;
use mfg_planning::dynamics::{forward_nonlinear, RandomizedStrategy, TimeGrid};
use mfg_planning::hamiltonian::backward_bellman;
use mfg_planning::planning::{check_gradient, project_simplex, regret_j, Decision, PlanningProblem};
use std::hint::black_box;

fn forward(c: &mut Criterion) {
    let model = builtin::section4();
    let mut group = c.benchmark_group("forward_nonlinear");
    for steps in [100, 400, 1600] {
        let problem = PlanningProblem::section4(steps);
        let nu = RandomizedStrategy::uniform(problem.grid, 3, model.actions.len());
        group.bench_with_input(BenchmarkId::from_parameter(steps), &nu, |b, nu| {
            b.iter(|| forward_nonlinear(&model, black_box(&problem.m0), nu).unwrap())
        });
    }
    group.finish();
}

fn bellman(c: &mut Criterion) {
    let model = builtin::congestion();
    let grid = TimeGrid::new(400, model.horizon).unwrap();
    let nu = RandomizedStrategy::uniform(grid, model.dim, model.actions.len());
    let m = forward_nonlinear(&model, &[1.0, 0.0, 0.0], &nu).unwrap();
    c.bench_function("backward_bellman/congestion/400", |b| {
        b.iter(|| backward_bellman(&model, &m, black_box(&[0.1, -0.2, 0.3])).unwrap())
    });
}

fn regret(c: &mut Criterion) {
    let model = builtin::section4();
    let problem = PlanningProblem::section4(400);
    let nu = RandomizedStrategy::uniform(problem.grid, 3, model.actions.len());
    let decision = Decision::new(nu, vec![0.3, -0.1, 0.2]).unwrap();
    c.bench_function("regret_j/section4/400", |b| {
        b.iter(|| regret_j(&model, &problem, black_box(&decision)).unwrap())
    });
    // one adjoint sweep plus two perturbed evaluations
    c.bench_function("gradient_check/section4/400", |b| {
        b.iter(|| check_gradient(&model, &problem, black_box(&decision), 1, 7).unwrap())
    });
}

fn simplex(c: &mut Criterion) {
    let v: Vec<f64> = (0..101).map(|k| ((k * 37) % 101) as f64 / 50.0 - 0.7).collect();
    c.bench_function("project_simplex/101", |b| {
        b.iter(|| {
            let mut w = v.clone();
            project_simplex(black_box(&mut w));
            w
        })
    });
}

criterion_group!(benches, forward, bellman, regret, simplex);
criterion_main!(benches);
