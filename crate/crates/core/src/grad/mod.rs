//! Small dense-tensor autodiff engine: MLPs, a per-call recording tape,
//! Adam, Polyak averaging and a finite-difference oracle.

mod mlp;
mod optim;
mod tape;
mod tensor;

pub use mlp::{Activation, Layer, Mlp, MlpGrads};
pub use optim::{adam_step, finite_difference_grad, polyak_update, AdamState};
pub use tape::{Gradients, MlpBinding, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GradError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("value was not recorded on this tape")]
    NotRecorded,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
