//! Classical RK4 steps and their reverse-mode transposes.

use crate::error::Result;

/// Right-hand side evaluated at the four RK4 stages of one step.
///
/// Stage `0` is the start of the step, stages `1` and `2` the midpoint,
/// stage `3` the end.
pub trait Rk4System {
    fn dim(&self) -> usize;

    fn eval(&mut self, stage: usize, y: &[f64], out: &mut [f64]) -> Result<()>;

    /// `out = (∂f/∂y)ᵀ kbar` at stage `stage` and state `y`; parameter
    /// cotangents are accumulated by the implementor. During a transpose
    /// step every stage is evaluated once, in order, before the `vjp` calls
    /// run in reverse order, so stage-local data may be cached in `eval`.
    fn vjp(&mut self, stage: usize, y: &[f64], kbar: &[f64], out: &mut [f64]) -> Result<()>;
}

fn axpy_into(out: &mut [f64], y: &[f64], a: f64, x: &[f64]) {
    for ((o, y), x) in out.iter_mut().zip(y).zip(x) {
        *o = y + a * x;
    }
}

/// `y1 = y0 + h/6 (k1 + 2k2 + 2k3 + k4)`.
pub fn rk4_step<S: Rk4System>(sys: &mut S, h: f64, y0: &[f64], y1: &mut [f64]) -> Result<()> {
    let d = sys.dim();
    let mut k = vec![0.0; d];
    let mut acc = vec![0.0; d];
    let mut y = vec![0.0; d];
    sys.eval(0, y0, &mut k)?;
    acc.copy_from_slice(&k);
    axpy_into(&mut y, y0, 0.5 * h, &k);
    sys.eval(1, &y, &mut k)?;
    acc.iter_mut().zip(&k).for_each(|(a, k)| *a += 2.0 * k);
    axpy_into(&mut y, y0, 0.5 * h, &k);
    sys.eval(2, &y, &mut k)?;
    acc.iter_mut().zip(&k).for_each(|(a, k)| *a += 2.0 * k);
    axpy_into(&mut y, y0, h, &k);
    sys.eval(3, &y, &mut k)?;
    for j in 0..d {
        y1[j] = y0[j] + h / 6.0 * (acc[j] + k[j]);
    }
    Ok(())
}

/// Transpose of [`rk4_step`]: given `ybar1 = ∂L/∂y1`, adds `∂L/∂y0` into
/// `ybar0`. The stages are recomputed from `y0`.
pub fn rk4_step_vjp<S: Rk4System>(sys: &mut S, h: f64, y0: &[f64], ybar1: &[f64], ybar0: &mut [f64]) -> Result<()> {
    let d = sys.dim();
    let mut stages = vec![y0.to_vec(); 4];
    let mut k = vec![0.0; d];
    for s in 0..3 {
        sys.eval(s, &stages[s], &mut k)?;
        let a = if s == 2 { h } else { 0.5 * h };
        axpy_into(&mut stages[s + 1], y0, a, &k);
    }
    sys.eval(3, &stages[3], &mut k)?;

    let w = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
    let mut kbar: Vec<Vec<f64>> = w.iter().map(|c| ybar1.iter().map(|v| c * v).collect()).collect();
    for (o, v) in ybar0.iter_mut().zip(ybar1) {
        *o += v;
    }
    let mut ybar_stage = vec![0.0; d];
    for s in (0..4).rev() {
        sys.vjp(s, &stages[s], &kbar[s], &mut ybar_stage)?;
        for (o, v) in ybar0.iter_mut().zip(&ybar_stage) {
            *o += v;
        }
        if s > 0 {
            let a = if s == 3 { h } else { 0.5 * h };
            for (kb, v) in kbar[s - 1].iter_mut().zip(&ybar_stage) {
                *kb += a * v;
            }
        }
    }
    Ok(())
}
