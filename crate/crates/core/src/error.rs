//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error enum. The CLI maps variants onto exit codes:
/// configuration problems exit 2, solver failures exit 3 and
/// verification-threshold failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    GridSpec(String),

    #[error("control window omega lies outside the closure of the domain")]
    OmegaOutsideDomain,

    #[error("position ({0}, {1}) lies outside the control window omega")]
    PositionOutsideOmega(f64, f64),

    #[error("invalid solver parameters: {0}")]
    SolverParams(String),

    #[error("picard iteration did not converge at step {step}: residual {residual:.3e} after {sweeps} sweeps")]
    PicardNonConvergence {
        step: usize,
        residual: f64,
        sweeps: usize,
    },

    #[error("non-finite value detected at step {0}")]
    NonFinite(usize),

    #[error("divergence {div:.3e} exceeds eps_div at step {step}")]
    DivergenceExceeded { step: usize, div: f64 },

    #[error("control trajectories have mismatched step counts: {0} vs {1}")]
    MismatchedNt(usize, usize),

    #[error("initial control is infeasible at step {step}: tv norm {tv:.6e} exceeds gamma {gamma:.6e}")]
    InfeasibleControl { step: usize, tv: f64, gamma: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("verification threshold not met: {0}")]
    Verification(String),

    #[error("malformed artifact {path}: {reason}")]
    Artifact { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::GridSpec(_)
            | Error::OmegaOutsideDomain
            | Error::SolverParams(_)
            | Error::Config(_)
            | Error::Artifact { .. }
            | Error::Io { .. } => 2,
            Error::PicardNonConvergence { .. }
            | Error::NonFinite(_)
            | Error::DivergenceExceeded { .. }
            | Error::MismatchedNt(_, _)
            | Error::InfeasibleControl { .. }
            | Error::PositionOutsideOmega(_, _) => 3,
            Error::Verification(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
