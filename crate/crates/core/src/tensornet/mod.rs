//! A small CPU network engine: convolutional, residual and dense-block
//! classifiers in single or double precision, named weight vectors,
//! side modules and SGD training.

pub mod arch;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod real;
pub mod tensor;
pub mod train;
pub mod weights;

pub use arch::{ArchSpec, Family};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use layers::{Ctx, Node};
pub use loss::{cross_entropy, predictions, LossOutput};
pub use network::{side_step_of, Network, SideKind, SideRecord};
pub use real::Real;
pub use tensor::Act;
pub use train::{Batch, BatchSource, Precision, Sgd, SgdConfig};
pub use weights::{Entry, EntryKind, WeightVector};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("weight schema mismatch: {0}")]
    Schema(String),
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite values after {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
