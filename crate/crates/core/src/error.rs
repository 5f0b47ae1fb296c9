use thiserror::Error;

use crate::analytical::ZDistribution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Probability exactly 0 or 1 where an open interval is required.
    #[error("boundary error: probability {0} has no finite quantile")]
    Boundary(f64),

    /// Aggregate moments that no distribution in the assumed family can attain.
    #[error("infeasible input: {0}")]
    Infeasible(String),

    #[error("no convergence after {iterations} iterations (best iterate m_z={}, s_z={}, residual={residual:e})", best.m_z, best.s_z)]
    NonConvergence {
        best: ZDistribution,
        iterations: usize,
        residual: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("age {age_months} months outside chart range [{min}, {max}]")]
    Range { age_months: f64, min: f64, max: f64 },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// Base `1 + lambda*sigma*z` of the inverse Box-Cox transform is not positive.
    #[error("invalid LMS base {base} (z={z}); truncate z before converting")]
    InvalidBase { z: f64, base: f64 },

    #[error("step rejected: s_z + delta_s = {0} is not positive")]
    StepRejected(f64),

    #[error("unknown chart `{0}`")]
    UnknownChart(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag used by the CLI and the C API.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Boundary(_) => "boundary",
            Error::Infeasible(_) => "infeasible",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Parse { .. } => "parse",
            Error::Range { .. } => "range",
            Error::Sampling(_) => "sampling",
            Error::Validation(_) => "validation",
            Error::InvalidBase { .. } => "invalid_base",
            Error::StepRejected(_) => "step_rejected",
            Error::UnknownChart(_) => "unknown_chart",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
