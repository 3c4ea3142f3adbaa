use alloc::boxed::Box;
use alloc::string::String;

use crate::model::EpidemicState;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, found {found}")]
    Alignment { expected: usize, found: usize },

    #[error("invalid domain: {0}")]
    InvalidDomain(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration {
        t: f64,
        reason: &'static str,
        last_good: Box<EpidemicState>,
    },

    #[error("stopping rule not met by t = {t}: remaining infected mass {remaining:e}")]
    PartialConvergence {
        t: f64,
        remaining: f64,
        state: Box<EpidemicState>,
    },

    #[error("{what} did not converge in {iterations} iterations (gap {gap:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        gap: f64,
    },

    #[error("monotonicity violated in {what} at iteration {iteration} (excess {excess:e})")]
    Monotonicity {
        what: &'static str,
        iteration: usize,
        excess: f64,
    },

    #[error("spectral radius {radius} is not below 1")]
    NotSubcritical { radius: f64 },

    #[error("no herd-immunity crossing: initial radius {r0} <= 1")]
    NoCrossing { r0: f64 },

    #[error("trajectory too short: final radius {final_radius} >= 1, extend the run")]
    TrajectoryTooShort { final_radius: f64 },

    #[error("observed contraction factor {observed} exceeds radius {radius}")]
    ContractionViolated { observed: f64, radius: f64 },

    #[error("decay-rate fit failed: {0}")]
    FitQuality(&'static str),

    #[error("no bracket for {0}")]
    NoBracket(&'static str),

    #[error("unsupported structure: {0}")]
    Unsupported(&'static str),
}
