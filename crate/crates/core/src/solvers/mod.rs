//! Reference data generators: exact advection, a method-of-lines solver for a
//! randomized 1D PDE family, a pseudo-spectral 2D vorticity solver, and the
//! dataset generation that ties them to the sample schema.

mod advection;
mod family1d;
mod generate;
mod ns2d;
mod sampling;

pub use advection::{shift_periodic, solve_advection_exact};
pub use family1d::{solve_1d_family, Family1DSpec};
pub use generate::{
    generate_dataset, AdvectionTask, Family1DTask, GenerationReport, HeterNsTask, StringTask, TaskSpec,
};
pub use ns2d::{heterns_force, solve_ns2d_spectral, HeterNsSpec};
pub use sampling::{sample_1d_pde, sample_trig_series, seeded_rng, TrigFamily, TrigSeries};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("solution diverged at step {step} (t = {time}): {reason}")]
    Diverged { step: usize, time: f64, reason: String },
    #[error("exact advection requires a periodic boundary")]
    NonPeriodic,
    #[error("invalid solver input: {0}")]
    Invalid(String),
    #[error("{diverged} of {attempted} solves diverged, above the 10% limit")]
    TooManyDivergences { diverged: usize, attempted: usize },
    #[error(transparent)]
    Oracle(#[from] crate::string_oracle::OracleError),
}
