//! The full resting-phase surface `N(t, m)` on a characteristic-aligned
//! grid, the reconstructed proliferating surface `P(t, m)`, and the
//! finite-time propagation experiments built on them.

use thiserror::Error;

mod grid;
mod solver;

pub mod experiments;

pub use grid::{GriddedData, InitialData, MatCoef, MaturityGrid, TimeCoef};
pub use solver::{
    operator_g, operator_j, reconstruct_p, solve_field, Field, FieldMeta, FieldParams, StepStats,
};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("fixed-point iteration diverged at t = {t} (residual {residual:e} after {iterations} iterations); reduce dt")]
    PicardDiverged {
        t: f64,
        residual: f64,
        iterations: usize,
    },
    #[error("history gap: needed a sample at t = {needed}, stored window starts at {earliest}")]
    HistoryGap { needed: f64, earliest: f64 },
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("generation recurrence exceeded {0} iterations")]
    IterationCap(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid initial data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Boundary(#[from] crate::dde::DdeError),
}

#[cfg(test)]
mod tests;
