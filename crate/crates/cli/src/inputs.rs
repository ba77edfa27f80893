//! Loading models, vectors, strategies and problems from flags and files.

use std::fs;
use std::path::{Path, PathBuf};

use mfg_planning::dynamics::{DistributionFlow, Flow, RandomizedStrategy, TimeGrid};
use mfg_planning::model::eval_const;
use mfg_planning::planning::PlanningProblem;
use mfg_planning::{builtin, parse_model, Error, ModelSpec, Result};

/// Reading or parsing an input failed; reported with exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn read(path: &Path) -> std::result::Result<String, InputError> {
    fs::read_to_string(path).map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))
}

/// A built-in name, or else a model file.
pub fn load_model(name: &str) -> std::result::Result<ModelSpec, CliError> {
    if let Some(m) = builtin::by_name(name) {
        if !Path::new(name).exists() {
            return Ok(m);
        }
    }
    let text = read(Path::new(name))?;
    parse_model(&text).map_err(|e| CliError::Input(format!("{name}: {e}")))
}

/// Comma-separated constant expressions, optionally bracketed.
pub fn parse_vector(raw: &str) -> Result<Vec<f64>> {
    let raw = raw.trim();
    let raw = raw.strip_prefix('[').and_then(|r| r.strip_suffix(']')).unwrap_or(raw);
    raw.split(',').map(|v| eval_const(v.trim())).collect()
}

pub fn load_problem(path: &Path, grid: TimeGrid) -> std::result::Result<PlanningProblem, CliError> {
    let text = read(path)?;
    PlanningProblem::parse(&text, grid).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_flow(path: &Path) -> std::result::Result<DistributionFlow, CliError> {
    let text = read(path)?;
    Flow::from_csv(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_strategy(
    path: &Path,
    grid: TimeGrid,
    model: &ModelSpec,
) -> std::result::Result<RandomizedStrategy, CliError> {
    let text = read(path)?;
    let nu = RandomizedStrategy::from_csv(&text, grid, model.dim, model.actions.len())
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    nu.validate(1e-9)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(nu)
}

/// Controls that can be named on the command line.
pub const CONTROLS: &[&str] = &["section4-utilde", "uniform", "min", "max"];

pub fn named_control(
    name: &str,
    model: &ModelSpec,
    grid: TimeGrid,
) -> std::result::Result<RandomizedStrategy, CliError> {
    let (d, na) = (model.dim, model.actions.len());
    let mut nu = match name {
        "section4-utilde" => {
            RandomizedStrategy::from_piecewise(grid, d, &model.actions, &[builtin::SECTION4_SWITCH], &[0.0, 1.0])
                .map_err(|e| CliError::Input(format!("control {name}: {e}")))?
        }
        "uniform" => RandomizedStrategy::uniform(grid, d, na),
        "min" => RandomizedStrategy::dirac(grid, d, na, 0),
        "max" => RandomizedStrategy::dirac(grid, d, na, na - 1),
        _ => {
            return Err(CliError::Usage(format!(
                "unknown control '{name}'; expected one of {}",
                CONTROLS.join(", ")
            )))
        }
    };
    nu.canonicalize(model);
    Ok(nu)
}

/// A strategy from `--strategy` or `--control` (default `uniform`).
pub fn strategy_from(
    file: Option<&PathBuf>,
    control: Option<&str>,
    model: &ModelSpec,
    grid: TimeGrid,
) -> std::result::Result<RandomizedStrategy, CliError> {
    match (file, control) {
        (Some(_), Some(_)) => Err(CliError::Usage("give either --strategy or --control, not both".into())),
        (Some(path), None) => load_strategy(path, grid, model),
        (None, c) => named_control(c.unwrap_or("uniform"), model, grid),
    }
}

/// Point mass on state 1 unless given.
pub fn initial(raw: Option<&str>, model: &ModelSpec) -> std::result::Result<Vec<f64>, CliError> {
    match raw {
        Some(r) => {
            let v = parse_vector(r).map_err(|e| CliError::Usage(format!("--m0: {e}")))?;
            model
                .check_distribution(&v, "m0")
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Ok(v)
        }
        None => {
            let mut v = vec![0.0; model.dim];
            v[0] = 1.0;
            Ok(v)
        }
    }
}

pub fn write(path: &Path, text: &str) -> std::result::Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag values: exit 2.
    Usage(String),
    /// Unreadable or malformed input files, invalid models: exit 2.
    Input(String),
    /// Numerical failure inside the solver: exit 1.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => 2,
            CliError::Numerical(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<InputError> for CliError {
    fn from(e: InputError) -> Self {
        CliError::Input(e.0)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::DivisionByZero { .. }
            | Error::LogDomain { .. }
            | Error::NonFinite { .. }
            | Error::Positivity { .. }
            | Error::Overflow { .. }
            | Error::UnboundedRate(_)
            | Error::Infeasible { .. }
            | Error::GradientCheck { .. } => CliError::Numerical(msg),
            Error::InvalidArgument(_) | Error::EnumerationBound { .. } => CliError::Usage(msg),
            _ => CliError::Input(msg),
        }
    }
}
