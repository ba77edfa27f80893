use serde::Serialize;

use crate::error::{Error, Result};

/// Optimizer settings, read from `key = value` text. Unknown keys are
/// rejected; `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerSettings {
    pub n_starts: usize,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Euclidean tolerance on `m(T) − mT`.
    pub feasibility_tol: f64,
    /// Inner solves stop once the merit decrease over the line-search
    /// memory is below `opt_tol + stall_rel·|merit|`.
    pub opt_tol: f64,
    pub stall_rel: f64,
    pub cluster_tol: f64,
    pub seed: u64,
    /// Initial penalty weight of the augmented Lagrangian.
    pub rho0: f64,
    /// Penalty growth when the constraint violation stalls.
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Projected-gradient stationarity tolerance of the inner solver.
    pub pg_tol: f64,
    /// Nonmonotone line-search memory.
    pub memory: usize,
    pub armijo: f64,
    pub step_min: f64,
    pub step_max: f64,
    /// Verify the adjoint gradient against finite differences at each start.
    pub gradient_check: bool,
    /// Number of test functions in the strategy metric.
    pub metric_terms: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            n_starts: 8,
            max_outer_iters: 12,
            max_inner_iters: 300,
            feasibility_tol: 1e-4,
            opt_tol: 1e-8,
            stall_rel: 1e-4,
            cluster_tol: 1e-3,
            seed: 0,
            rho0: 1e6,
            rho_growth: 10.0,
            rho_max: 1e10,
            pg_tol: 1e-9,
            memory: 10,
            armijo: 1e-4,
            step_min: 1e-12,
            step_max: 1e12,
            gradient_check: false,
            metric_terms: super::metric::DEFAULT_TERMS,
        }
    }
}

fn value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Parse(format!("settings: bad value '{raw}' for '{key}'")))
}

impl OptimizerSettings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = OptimizerSettings::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("settings line {}: expected key = value", lineno + 1)))?;
            s.set(key.trim(), raw.trim())?;
        }
        s.check()?;
        Ok(s)
    }

    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "n_starts" => self.n_starts = value(key, raw)?,
            "max_outer_iters" => self.max_outer_iters = value(key, raw)?,
            "max_inner_iters" => self.max_inner_iters = value(key, raw)?,
            "feasibility_tol" => self.feasibility_tol = value(key, raw)?,
            "opt_tol" => self.opt_tol = value(key, raw)?,
            "stall_rel" => self.stall_rel = value(key, raw)?,
            "cluster_tol" => self.cluster_tol = value(key, raw)?,
            "seed" => self.seed = value(key, raw)?,
            "rho0" => self.rho0 = value(key, raw)?,
            "rho_growth" => self.rho_growth = value(key, raw)?,
            "rho_max" => self.rho_max = value(key, raw)?,
            "pg_tol" => self.pg_tol = value(key, raw)?,
            "memory" => self.memory = value(key, raw)?,
            "armijo" => self.armijo = value(key, raw)?,
            "step_min" => self.step_min = value(key, raw)?,
            "step_max" => self.step_max = value(key, raw)?,
            "gradient_check" => self.gradient_check = value(key, raw)?,
            "metric_terms" => self.metric_terms = value(key, raw)?,
            _ => return Err(Error::Parse(format!("settings: unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        let positive = [
            ("feasibility_tol", self.feasibility_tol),
            ("opt_tol", self.opt_tol),
            ("cluster_tol", self.cluster_tol),
            ("rho0", self.rho0),
            ("pg_tol", self.pg_tol),
            ("armijo", self.armijo),
            ("step_min", self.step_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.stall_rel >= 0.0 && self.stall_rel < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "stall_rel must lie in [0, 1), got {}",
                self.stall_rel
            )));
        }
        if !(self.rho_growth > 1.0) || !(self.rho_max >= self.rho0) || !(self.step_max > self.step_min) {
            return Err(Error::InvalidArgument("penalty or step bounds are inconsistent".into()));
        }
        if self.n_starts == 0 && self.max_outer_iters == 0 {
            return Err(Error::InvalidArgument("nothing to run".into()));
        }
        if self.memory == 0 || self.metric_terms == 0 {
            return Err(Error::InvalidArgument(
                "memory and metric_terms must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Strictly increasing ball radii.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSchedule {
    radii: Vec<f64>,
}

impl AlphaSchedule {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::InvalidArgument("schedule is empty".into()));
        }
        if radii.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument("radii must be positive and finite".into()));
        }
        if let Some(w) = radii.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "radii must increase strictly: {} then {}",
                w[0], w[1]
            )));
        }
        Ok(AlphaSchedule { radii })
    }

    /// Comma-separated radii.
    pub fn parse(text: &str) -> Result<Self> {
        let radii = text
            .split(',')
            .map(|s| value::<f64>("schedule", s.trim()))
            .collect::<Result<Vec<_>>>()?;
        AlphaSchedule::new(radii)
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule {
            radii: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_settings_file() {
        let s =
            OptimizerSettings::parse("n_starts = 3\n# comment\nseed=7 # trailing\nfeasibility_tol = 1e-5\n").unwrap();
        assert_eq!(s.n_starts, 3);
        assert_eq!(s.seed, 7);
        assert_eq!(s.feasibility_tol, 1e-5);
        assert_eq!(s.max_inner_iters, OptimizerSettings::default().max_inner_iters);
    }

    #[test]
    fn rejects_unknown_key_and_bad_value() {
        assert!(OptimizerSettings::parse("speed = 3").is_err());
        assert!(OptimizerSettings::parse("n_starts = many").is_err());
        assert!(OptimizerSettings::parse("opt_tol = -1").is_err());
    }

    #[test]
    fn schedule_must_increase() {
        assert!(AlphaSchedule::parse("1, 2, 4").is_ok());
        assert!(AlphaSchedule::parse("1, 1, 4").is_err());
        assert!(AlphaSchedule::parse("2, 1").is_err());
        assert!(AlphaSchedule::parse("0, 1").is_err());
        assert_eq!(AlphaSchedule::default().radii().len(), 6);
    }
}
