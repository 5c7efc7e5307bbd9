use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A network, scenario, or configuration invariant does not hold.
    #[error("validation: {0}")]
    Validation(String),

    /// An argument lies outside the domain of an operation.
    #[error("domain: {0}")]
    Domain(String),

    #[error(
        "power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)"
    )]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("equilibrium of device {device}: {reason}")]
    Equilibrium { device: String, reason: String },

    #[error("topology: {0}")]
    Topology(String),

    #[error("algebraic loop through subsystems [{}]", .0.join(", "))]
    AlgebraicLoop(Vec<String>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("eigen-solver did not converge")]
    EigenSolver,

    #[error("classifier: {0}")]
    Classifier(String),

    #[error("parse: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by inputs rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Domain(_) | Error::Topology(_) | Error::Parse(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
