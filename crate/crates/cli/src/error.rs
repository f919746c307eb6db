use std::fmt;

use graph_vortex::continuation::ContinuationError;
use graph_vortex::mountain_pass::MountainPassError;
use graph_vortex::poisson::BadCoupling;
use graph_vortex::{InstanceError, SolverError};

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

/// A failure with a stable code and the process exit status it maps to.
#[derive(Debug, Clone)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit: i32,
}

impl CliError {
    pub fn new(exit: i32, code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_string(), message: message.into(), exit }
    }

    pub fn validation(code: &str, message: impl Into<String>) -> Self {
        Self::new(EXIT_VALIDATION, code, message)
    }

    pub fn numerical(code: &str, message: impl Into<String>) -> Self {
        Self::new(EXIT_NUMERICAL, code, message)
    }

    pub fn internal(code: &str, message: impl Into<String>) -> Self {
        Self::new(EXIT_INTERNAL, code, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<InstanceError> for CliError {
    fn from(e: InstanceError) -> Self {
        Self::validation(e.code(), e.to_string())
    }
}

impl From<BadCoupling> for CliError {
    fn from(e: BadCoupling) -> Self {
        Self::validation("BAD_COUPLING", e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        let exit = match e {
            SolverError::Coupling(_) => EXIT_VALIDATION,
            SolverError::LineSearch { .. } | SolverError::NonFinite | SolverError::BarrierExceeded { .. } => EXIT_NUMERICAL,
            _ => EXIT_INTERNAL,
        };
        Self::new(exit, e.code(), e.to_string())
    }
}

impl From<ContinuationError> for CliError {
    fn from(e: ContinuationError) -> Self {
        match e {
            ContinuationError::Solver(inner) => inner.into(),
            ContinuationError::Coupling(_) | ContinuationError::BadTolerance(_) | ContinuationError::BadGrid => {
                Self::validation(e.code(), e.to_string())
            }
            _ => Self::numerical(e.code(), e.to_string()),
        }
    }
}

impl From<MountainPassError> for CliError {
    fn from(e: MountainPassError) -> Self {
        match e {
            MountainPassError::Solver(inner) => inner.into(),
            MountainPassError::TooFewPoints(_) => Self::validation(e.code(), e.to_string()),
            MountainPassError::NotASolution(_) | MountainPassError::EndpointCap => Self::numerical(e.code(), e.to_string()),
            _ => Self::internal(e.code(), e.to_string()),
        }
    }
}

impl From<graph_vortex::graph::DimensionMismatch> for CliError {
    fn from(e: graph_vortex::graph::DimensionMismatch) -> Self {
        Self::internal("DIMENSION_MISMATCH", e.to_string())
    }
}

impl From<graph_vortex::poisson::PoissonError> for CliError {
    fn from(e: graph_vortex::poisson::PoissonError) -> Self {
        Self::internal(e.code(), e.to_string())
    }
}
