use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ModelSpec, KOLMOGOROV_TOL};
use crate::rng::sample_simplex;

/// First sample at which the Kolmogorov property failed.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationWitness {
    pub t: f64,
    pub m: Vec<f64>,
    pub u: f64,
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub kolmogorov_ok: bool,
    pub max_row_sum_deviation: f64,
    pub min_off_diagonal: f64,
    /// Largest finite-difference ratio `|Q(m) - Q(m')| / |m - m'|` found.
    /// Advisory only.
    pub lipschitz_estimate: f64,
    pub discontinuity_suspected: bool,
    pub witness: Option<ValidationWitness>,
}

/// Ratio above which a jump in `m` is reported as a likely discontinuity.
const DISCONTINUITY_RATIO: f64 = 1e3;

fn rate_rows(model: &ModelSpec, t: f64, m: &[f64], u: f64) -> Result<Vec<f64>, String> {
    let d = model.dim;
    let mut q = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            q[i * d + j] = model.rates[i][j].eval_at(t, m, u).map_err(|e| e.to_string())?;
        }
    }
    Ok(q)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Samples `n_samples` points `(t, m, u)` and checks the rate matrix there.
///
/// The Lipschitz estimate pairs each sample with a second random
/// distribution at the same `(t, u)` and then bisects the segment between
/// them toward the larger jump; the bisection depth grows with
/// `log2(n_samples)`, so a genuine discontinuity produces a ratio that
/// keeps growing with the sample count.
pub fn validate_model(model: &ModelSpec, n_samples: usize, seed: u64) -> ValidationReport {
    let d = model.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_samples.max(1);
    let depth = (n as f64).log2().ceil() as usize + 4;
    let mut report = ValidationReport {
        samples: n,
        kolmogorov_ok: true,
        max_row_sum_deviation: 0.0,
        min_off_diagonal: f64::INFINITY,
        lipschitz_estimate: 0.0,
        discontinuity_suspected: false,
        witness: None,
    };
    let actions = model.actions.points();
    let fail = |report: &mut ValidationReport, t: f64, m: &[f64], u: f64, row: usize, message: String| {
        report.kolmogorov_ok = false;
        if report.witness.is_none() {
            report.witness = Some(ValidationWitness {
                t,
                m: m.to_vec(),
                u,
                row,
                message,
            });
        }
    };
    for _ in 0..n {
        let t = rng.gen::<f64>() * model.horizon;
        let m = sample_simplex(&mut rng, d);
        let u = actions[rng.gen_range(0..actions.len())];
        let q = match rate_rows(model, t, &m, u) {
            Ok(q) => q,
            Err(msg) => {
                fail(&mut report, t, &m, u, 0, msg);
                continue;
            }
        };
        for i in 0..d {
            let row = &q[i * d..(i + 1) * d];
            let scale = row.iter().map(|v| v.abs()).fold(1.0, f64::max);
            let sum: f64 = row.iter().sum();
            report.max_row_sum_deviation = report.max_row_sum_deviation.max(sum.abs());
            if sum.abs() > KOLMOGOROV_TOL * scale {
                fail(&mut report, t, &m, u, i + 1, format!("row sum {sum:e}"));
            }
            for (j, &v) in row.iter().enumerate() {
                if j == i {
                    continue;
                }
                report.min_off_diagonal = report.min_off_diagonal.min(v);
                if v < -KOLMOGOROV_TOL * scale {
                    fail(
                        &mut report,
                        t,
                        &m,
                        u,
                        i + 1,
                        format!("entry ({}, {}) = {v:e}", i + 1, j + 1),
                    );
                }
            }
        }

        let mut a = m;
        let mut b = sample_simplex(&mut rng, d);
        let (Ok(mut qa), Ok(mut qb)) = (Ok::<_, String>(q), rate_rows(model, t, &b, u)) else {
            continue;
        };
        for level in 0..=depth {
            let len = dist(&a, &b);
            if len == 0.0 {
                break;
            }
            let ratio = max_diff(&qa, &qb) / len;
            report.lipschitz_estimate = report.lipschitz_estimate.max(ratio);
            if level == depth {
                break;
            }
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let Ok(qm) = rate_rows(model, t, &mid, u) else {
                break;
            };
            if max_diff(&qa, &qm) >= max_diff(&qm, &qb) {
                b = mid;
                qb = qm;
            } else {
                a = mid;
                qa = qm;
            }
        }
    }
    if d < 2 {
        report.min_off_diagonal = 0.0;
    }
    report.discontinuity_suspected = report.lipschitz_estimate > DISCONTINUITY_RATIO;
    report
}
