use thiserror::Error;

use crate::integrate::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch for {what}: expected {expected}, got {got}")]
    InputShape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("injection is rank deficient: rank {rank} < {k}")]
    SingularInjection { rank: usize, k: usize },

    #[error("degenerate Lagrangian: Hessian pivot ratio {pivot_ratio:.3e} below threshold")]
    DegenerateLagrangian { pivot_ratio: f64 },

    #[error("degenerate constraints: KKT pivot ratio {pivot_ratio:.3e} below threshold")]
    DegenerateConstraint { pivot_ratio: f64 },

    #[error("degenerate metric: pivot ratio {pivot_ratio:.3e} below threshold")]
    DegenerateMetric { pivot_ratio: f64 },

    #[error("state violates constraints by {violation:.3e}")]
    InconsistentState { violation: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown system '{0}'")]
    UnknownSystem(String),

    #[error("step size {h:.3e} underflowed at t = {t}")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite state after t = {t}")]
    BlowUp { t: f64 },

    #[error("trajectory comparison failed: {0}")]
    Comparison(String),

    #[error("rank of the anchor changed along the trajectory at t = {t}: {expected} -> {found}")]
    NonConstantRank {
        t: f64,
        expected: usize,
        found: usize,
    },

    #[error(transparent)]
    Integration(Box<IntegrationFailure>),
}

/// An integration that stopped early. `partial` holds every state accepted
/// before the failure.
#[derive(Debug, Error)]
#[error("integration failed: {error}")]
pub struct IntegrationFailure {
    pub error: Error,
    pub partial: Trajectory,
}

impl From<IntegrationFailure> for Error {
    fn from(f: IntegrationFailure) -> Self {
        Error::Integration(Box::new(f))
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::InputShape {
            what,
            expected,
            got,
        })
    }
}
