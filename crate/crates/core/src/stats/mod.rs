//! Conditional-independence testing, Markov blankets, additive-noise
//! direction tests and the PC baseline.

mod anm;
mod blanket;
mod ci;
mod pc;

pub use anm::{anm_direction, anm_direction_cols, AnmConfig, Direction, DirectionJudgment};
pub use blanket::{markov_blanket, MarkovBlanket};
pub use ci::{ci_test, CITestResult, CiTester};
pub use pc::{pc_baseline, pc_edges};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("{n} samples are too few for a conditioning set of size {k}")]
    TooFewSamples { n: usize, k: usize },
}

pub type Result<T> = std::result::Result<T, StatsError>;

pub const DEFAULT_ALPHA: f64 = 0.05;

/// Two-sided tail probability of a standard normal.
pub(crate) fn normal_two_sided(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}
