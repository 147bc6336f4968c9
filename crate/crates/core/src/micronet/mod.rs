//! Small neural-network layer: the operators needed by the CNN and
//! CNN-BLSTM classifiers, with hand-written backward passes.

pub mod adam;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod lstm;
pub mod model;
pub mod ops;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamMoments};
pub use gradcheck::{grad_check, GradCheckReport};
pub use io::{load_weights, read_weights, save_weights, write_weights};
pub use loss::{cross_entropy, softmax};
pub use model::{
    Architecture, BlstmConfig, CnnConfig, ForwardTrace, Model, ModelSpec, ParamSet, ShapeTrace,
    MIN_FRAME_WIDTH,
};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty frame list")]
    EmptyFrameList,
    #[error("empty sequence")]
    EmptySequence,
    #[error("weight file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
