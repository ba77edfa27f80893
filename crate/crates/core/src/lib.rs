//! Numerical planning for continuous-time finite state mean field games.
//!
//! The crate integrates the forward Kolmogorov and backward Bellman
//! equations of a game, evaluates the regret of a decision (terminal payoff
//! plus randomized feedback strategy), and minimizes that regret under the
//! terminal constraint `m(T) = mT`.

// Index loops mirror the matrix formulas; `!(a <= b)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod chain;
pub mod dynamics;
pub mod error;
pub mod hamiltonian;
pub mod model;
pub mod planning;
pub mod rng;

pub use error::{Error, Result};
pub use model::{builtin, parse_model, ActionGrid, ModelSpec};
