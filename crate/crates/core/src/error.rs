use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("solver blow-up at step {step}: {detail}")]
    BlowUp { step: usize, detail: String },

    #[error("latent rollout produced a non-finite value at step {step}")]
    Rollout { step: usize },

    #[error("diffusion sampler produced a non-finite sample at tau = {tau}")]
    Diffusion { tau: f64 },

    #[error("training error: {0}")]
    Training(String),

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("phase {phase} failed: {source}")]
    Phase { phase: &'static str, source: Box<Error> },
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Dimension(_) | Error::Contract(_) => 1,
            Error::BlowUp { .. }
            | Error::Rollout { .. }
            | Error::Diffusion { .. }
            | Error::Training(_)
            | Error::Metric(_) => 2,
            Error::Io(_) | Error::Format(_) => 3,
            Error::Phase { source, .. } => source.exit_code(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
