use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown variable `{name}`")]
    UnknownVariable { name: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("division by zero in `{expr}`")]
    DivisionByZero { expr: String },

    #[error("log of nonpositive value {value} in `{expr}`")]
    LogDomain { expr: String, value: f64 },

    #[error("non-finite value in `{expr}`")]
    NonFinite { expr: String },

    #[error("Kolmogorov property violated in row {row}, column {col} (value {value:e}) at t={t}, m={m:?}, u={u}")]
    Kolmogorov {
        row: usize,
        col: usize,
        value: f64,
        t: f64,
        m: Vec<f64>,
        u: f64,
    },

    #[error("not a probability vector: {0}")]
    NotSimplex(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("distribution left the simplex at node {node}: component {state} = {value:e}")]
    Positivity { node: usize, state: usize, value: f64 },

    #[error("value function overflow at node {node} (|phi| = {value:e})")]
    Overflow { node: usize, value: f64 },

    #[error("unbounded jump rate: {0}")]
    UnboundedRate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no start reached the feasibility tolerance {tol:e}; best terminal gap {best_gap:e}")]
    Infeasible { tol: f64, best_gap: f64 },

    #[error("gradient check failed: adjoint {adjoint:e} vs finite difference {finite_diff:e}")]
    GradientCheck { adjoint: f64, finite_diff: f64 },

    #[error("model is not in split form: {0}")]
    NotSplit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("enumeration bound exceeded: {count} candidates (limit {limit})")]
    EnumerationBound { count: f64, limit: f64 },

    #[error("parse error: {0}")]
    Parse(String),
}
