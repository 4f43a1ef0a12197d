//! Double GFlowNet training on the hypergrid benchmark.
//!
//! The crate contains a small reverse-mode autodiff engine ([`autodiff`]),
//! the hypergrid environment ([`env`]), the policy network ([`policy`]),
//! trajectory-balance objectives ([`objectives`]), the target-network
//! trainer ([`trainer`]), evaluation metrics ([`metrics`]), exact
//! distribution oracles ([`oracle`]) and experiment orchestration
//! ([`experiment`]).

pub mod autodiff;
pub mod checkpoint;
pub mod env;
pub mod experiment;
pub mod metrics;
pub mod objectives;
pub mod oracle;
pub mod policy;
pub mod trainer;

use thiserror::Error;

pub use autodiff::AutodiffError;
pub use env::EnvError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("the origin has no parents")]
    NoParents,
    #[error("trajectory exceeded the maximum length of {0} actions")]
    TrajectoryTooLong(usize),
    #[error("reward must be positive and finite, got {0}")]
    NonPositiveReward(f64),
    #[error("sub-trajectory balance needs the state-flow head")]
    MissingLogFlow,
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("non-finite loss at step {step}; residuals: {residuals:?}")]
    NonFiniteLoss { step: u64, residuals: Vec<f64> },
    #[error("{0}")]
    Metric(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
