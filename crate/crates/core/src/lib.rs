//! Residual actor-critic finetuning of a frozen flow-matching action-chunk
//! policy on GateWorld, plus the analysis metrics used to study it.

pub mod analysis;
pub mod bc_flow;
pub mod cli;
pub mod dice_rl;
pub mod envs;
pub mod grad;
pub mod rollout;

use envs::EnvError;
use grad::GradError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}
