//! Checks of the solution concepts and of the structural conditions behind
//! uniqueness, plus an enumeration oracle for the Bellman equation.

mod brute;
mod classical;
mod conditions;
mod fixedpoint;
mod probe;

pub use brute::{brute_force_value, BruteForce, ENUMERATION_LIMIT};
pub use classical::{check_classical, ArgmaxViolation, ClassicalReport, SUPPORT_TOL};
pub use conditions::{
    concavity_check, monotonicity_check, ConcavityReport, ConcavityWitness, MonotonicityReport, MonotonicityWitness,
    PhiBox, Verdict,
};
pub use fixedpoint::{solve_mfg_fixedpoint, FixedPoint, FIXED_POINT_TOL};
pub use probe::{uniqueness_probe, SeedOutcome, UniquenessReport};
