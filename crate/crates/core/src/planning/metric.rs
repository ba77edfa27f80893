use std::f64::consts::PI;

use crate::dynamics::RandomizedStrategy;
use crate::error::{Error, Result};

/// Test functions used when no count is given.
pub const DEFAULT_TERMS: usize = 64;

/// `(a, b)` frequency pairs in diagonal order `a + b = 1, 2, …`; the
/// constant pair is skipped since it cannot separate probability measures.
fn frequencies(terms: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(terms);
    let mut s = 1;
    while out.len() < terms {
        for a in 0..=s {
            if out.len() == terms {
                break;
            }
            out.push((a, s - a));
        }
        s += 1;
    }
    out
}

/// Weak-topology distance between randomized strategies:
/// `Σ_i Σ_l 2^{-l} |∫ψ_l dν¹_i − ∫ψ_l dν²_i|` with
/// `ψ_l(t, u) = cos(π a t / T)·cos(π b ū)`, `ū` the action rescaled to
/// `[0, 1]`. Time integrals are exact for step-wise constant weights and
/// are normalized by `T`.
pub fn strategy_metric(
    nu1: &RandomizedStrategy,
    nu2: &RandomizedStrategy,
    actions: &[f64],
    terms: usize,
) -> Result<f64> {
    if nu1.grid() != nu2.grid() {
        return Err(Error::GridMismatch("strategies live on different time grids".into()));
    }
    if nu1.dim() != nu2.dim() || nu1.n_actions() != nu2.n_actions() {
        return Err(Error::GridMismatch("strategies have different shapes".into()));
    }
    if actions.len() != nu1.n_actions() {
        return Err(Error::GridMismatch(format!(
            "{} action values for {} strategy actions",
            actions.len(),
            nu1.n_actions()
        )));
    }
    if terms == 0 {
        return Err(Error::InvalidArgument("need at least one test function".into()));
    }
    let grid = nu1.grid();
    let horizon = grid.horizon;
    let (lo, hi) = actions
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), u| (a.min(*u), b.max(*u)));
    let span = hi - lo;
    let scaled: Vec<f64> = actions
        .iter()
        .map(|u| if span > 0.0 { (u - lo) / span } else { 0.0 })
        .collect();
    let freqs = frequencies(terms);
    let max_a = freqs.iter().map(|f| f.0).max().unwrap_or(0);
    let max_b = freqs.iter().map(|f| f.1).max().unwrap_or(0);

    // time_int[a][n] = (1/T) ∫_{t_n}^{t_{n+1}} cos(π a t / T) dt
    let time_int: Vec<Vec<f64>> = (0..=max_a)
        .map(|a| {
            (0..grid.steps)
                .map(|n| {
                    let (t0, t1) = (grid.node(n) / horizon, grid.node(n + 1) / horizon);
                    if a == 0 {
                        t1 - t0
                    } else {
                        let w = PI * a as f64;
                        ((w * t1).sin() - (w * t0).sin()) / w
                    }
                })
                .collect()
        })
        .collect();
    let action_fn: Vec<Vec<f64>> = (0..=max_b)
        .map(|b| scaled.iter().map(|u| (PI * b as f64 * u).cos()).collect())
        .collect();

    let na = nu1.n_actions();
    let mut total = 0.0;
    for i in 0..nu1.dim() {
        // diff[b][n] = Σ_k (w1 − w2)(n, i, k) cos(π b ū_k)
        let diff: Vec<Vec<f64>> = (0..=max_b)
            .map(|b| {
                (0..grid.steps)
                    .map(|n| {
                        let (w1, w2) = (nu1.weights(n, i), nu2.weights(n, i));
                        (0..na).map(|k| (w1[k] - w2[k]) * action_fn[b][k]).sum()
                    })
                    .collect()
            })
            .collect();
        let mut weight = 1.0;
        for &(a, b) in &freqs {
            weight *= 0.5;
            let v: f64 = time_int[a].iter().zip(&diff[b]).map(|(x, y)| x * y).sum();
            total += weight * v.abs();
        }
    }
    Ok(total)
}
