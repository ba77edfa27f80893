use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::sample_simplex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Strict,
    Weak,
    Fail,
}

/// Sample with the largest `(m1 − m2)·(g1(t, m1) − g1(t, m2))` relative to
/// `‖m1 − m2‖²`.
#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityWitness {
    pub t: f64,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub inner: f64,
    /// `inner / ‖m1 − m2‖²`, so nearby pairs do not blur the verdict.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub verdict: Verdict,
    pub samples: usize,
    pub witness: MonotonicityWitness,
}

/// Tolerance around zero for both sampled checks.
const ZERO_TOL: f64 = 1e-12;

fn coupling(model: &ModelSpec) -> Result<&[crate::model::Expr]> {
    model.split.as_ref().map(|(_, g1)| g1.as_slice()).ok_or_else(|| {
        Error::NotSplit(format!(
            "{} declares g, not g0 + g1",
            model.name.as_deref().unwrap_or("model")
        ))
    })
}

/// Samples `(t, m1, m2)` and classifies the coupling part `g1` of the
/// running payoff: strict when every inner product
/// `(m1 − m2)·(g1(t, m1) − g1(t, m2))` is negative, weak when none is
/// positive. Inner products are compared after dividing by `‖m1 − m2‖²`.
pub fn monotonicity_check(model: &ModelSpec, n_samples: usize, seed: u64) -> Result<MonotonicityReport> {
    let g1 = coupling(model)?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let d = model.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut witness: Option<MonotonicityWitness> = None;
    for _ in 0..n_samples {
        let t = model.horizon * rng.gen::<f64>();
        let m1 = sample_simplex(&mut rng, d);
        let mut m2 = sample_simplex(&mut rng, d);
        while m2 == m1 {
            m2 = sample_simplex(&mut rng, d);
        }
        let mut inner = 0.0;
        for (i, e) in g1.iter().enumerate() {
            inner += (m1[i] - m2[i]) * (e.eval_at(t, &m1, 0.0)? - e.eval_at(t, &m2, 0.0)?);
        }
        let ratio = inner / m1.iter().zip(&m2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        if witness.as_ref().is_none_or(|w| ratio > w.ratio) {
            witness = Some(MonotonicityWitness {
                t,
                m1,
                m2,
                inner,
                ratio,
            });
        }
    }
    let witness = witness.expect("at least one sample");
    let verdict = if witness.ratio < -ZERO_TOL {
        Verdict::Strict
    } else if witness.ratio <= ZERO_TOL {
        Verdict::Weak
    } else {
        Verdict::Fail
    };
    Ok(MonotonicityReport {
        verdict,
        samples: n_samples,
        witness,
    })
}

/// Axis-aligned box of terminal-payoff-like vectors `φ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl PhiBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len()
            || lo
                .iter()
                .zip(&hi)
                .any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::InvalidArgument("box bounds must be finite with lo ≤ hi".into()));
        }
        Ok(PhiBox { lo, hi })
    }

    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<Self> {
        PhiBox::new(vec![lo; d], vec![hi; d])
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| a + (b - a) * rng.gen::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcavityWitness {
    pub t: f64,
    /// 1-based state.
    pub state: usize,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    /// `H0_i(t, φ̄) − (H0_i(t, φ1) + H0_i(t, φ2))/2`, `φ̄` the midpoint.
    pub defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcavityReport {
    pub verdict: Verdict,
    pub samples: usize,
    /// Largest `c` with `defect ≥ c·‖φ1 − φ2‖²` on every sample and state;
    /// positive means strictly concave on the box.
    pub margin: f64,
    /// Largest midpoint excess of the chord over `H0`, i.e. how convex
    /// `H0` looked; zero when no sample bent upward.
    pub convexity_defect: f64,
    /// Sample attaining `margin`.
    pub witness: ConcavityWitness,
}

/// `H0_i(t, φ) = max_u Σ_j Q_ij(t, u) φ_j + g0_i(t, u)` over the grid.
fn h0(model: &ModelSpec, g0: &[crate::model::Expr], t: f64, phi: &[f64], row: &mut [f64]) -> Result<Vec<f64>> {
    let d = model.dim;
    let m = vec![1.0 / d as f64; d];
    let mut best = vec![f64::NEG_INFINITY; d];
    for &u in model.actions.points() {
        for i in 0..d {
            model.eval_rate_row(i, t, &m, u, row)?;
            let v: f64 = row.iter().zip(phi).map(|(q, p)| q * p).sum::<f64>() + g0[i].eval_at(t, &m, u)?;
            best[i] = best[i].max(v);
        }
    }
    Ok(best)
}

/// Midpoint concavity test of `φ ↦ H0_i(t, φ)` on random pairs from
/// `phi_box`. `H0` is a maximum of affine functions of `φ`, hence convex,
/// so the test can only come out weak where `H0` is affine; the report
/// carries the fitted margin and the observed convexity either way.
pub fn concavity_check(model: &ModelSpec, phi_box: &PhiBox, n_samples: usize, seed: u64) -> Result<ConcavityReport> {
    let (g0, _) = model.split.as_ref().ok_or_else(|| {
        Error::NotSplit(format!(
            "{} declares g, not g0 + g1",
            model.name.as_deref().unwrap_or("model")
        ))
    })?;
    if model.rates_depend_on_m() {
        return Err(Error::Precondition(
            "concavity is tested for rates that do not read m".into(),
        ));
    }
    if phi_box.lo.len() != model.dim {
        return Err(Error::Dimension(format!(
            "box has {} components, model {}",
            phi_box.lo.len(),
            model.dim
        )));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row = vec![0.0; model.dim];
    let mut witness: Option<(f64, ConcavityWitness)> = None;
    let mut convexity_defect: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for _ in 0..n_samples {
        let t = model.horizon * rng.gen::<f64>();
        let phi1 = phi_box.sample(&mut rng);
        let phi2 = phi_box.sample(&mut rng);
        let dist2: f64 = phi1.iter().zip(&phi2).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist2 == 0.0 {
            continue;
        }
        let mid: Vec<f64> = phi1.iter().zip(&phi2).map(|(a, b)| 0.5 * (a + b)).collect();
        let (h1, h2, hm) = (
            h0(model, g0, t, &phi1, &mut row)?,
            h0(model, g0, t, &phi2, &mut row)?,
            h0(model, g0, t, &mid, &mut row)?,
        );
        for i in 0..model.dim {
            scale = scale.max(h1[i].abs()).max(h2[i].abs());
            let defect = hm[i] - 0.5 * (h1[i] + h2[i]);
            convexity_defect = convexity_defect.max(-defect);
            let ratio = defect / dist2;
            if witness.as_ref().is_none_or(|(r, _)| ratio < *r) {
                witness = Some((
                    ratio,
                    ConcavityWitness {
                        t,
                        state: i + 1,
                        phi1: phi1.clone(),
                        phi2: phi2.clone(),
                        defect,
                    },
                ));
            }
        }
    }
    let (margin, witness) =
        witness.ok_or_else(|| Error::InvalidArgument("the box is a single point; nothing to compare".into()))?;
    let tol = ZERO_TOL * scale;
    let verdict = if margin > 0.0 && witness.defect > tol {
        Verdict::Strict
    } else if convexity_defect <= tol {
        Verdict::Weak
    } else {
        Verdict::Fail
    };
    Ok(ConcavityReport {
        verdict,
        samples: n_samples,
        margin,
        convexity_defect,
        witness,
    })
}
