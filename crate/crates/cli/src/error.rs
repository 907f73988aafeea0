use dirac_core::integrate::IntegrateError;
use dirac_core::morse::MorseError;
use dirac_core::reduction::ReductionError;
use dirac_core::systems::SystemError;
use dirac_core::ExprError;
use thiserror::Error;

/// Failures, grouped by exit code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    /// Unreadable file, schema violation, parse error, missing seed value.
    #[error("{0}")]
    Input(String),
    /// Irregular family, empty final manifold, divergent ladder.
    #[error("{0}")]
    Structural(String),
    /// Newton failure or rank drift during a computation.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Structural(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<ExprError> for CliError {
    fn from(e: ExprError) -> Self {
        match e {
            ExprError::Domain { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<MorseError> for CliError {
    fn from(e: MorseError) -> Self {
        match e {
            MorseError::Expr(e) => e.into(),
            MorseError::NoConvergence { .. } | MorseError::NotOnM0 { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ReductionError> for CliError {
    fn from(e: ReductionError) -> Self {
        match e {
            ReductionError::Expr(e) => e.into(),
            ReductionError::Morse(e) => e.into(),
            ReductionError::LadderDiverged { .. }
            | ReductionError::EmptyFinalManifold { .. }
            | ReductionError::SingularDeterminingBlock { .. } => CliError::Structural(e.to_string()),
            ReductionError::NewtonFailure { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        match e {
            SystemError::Expr(e) => e.into(),
            SystemError::Morse(e) => e.into(),
            SystemError::Reduction(e) => e.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<IntegrateError> for CliError {
    fn from(e: IntegrateError) -> Self {
        match e {
            IntegrateError::Reduction(e) => e.into(),
            IntegrateError::Expr(e) => e.into(),
            IntegrateError::InvalidConfig(_) => CliError::Input(e.to_string()),
            IntegrateError::NewtonFailure { .. } | IntegrateError::RankDrift { .. } => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}
