//! A minimal deterministic neural-network engine.
//!
//! Forward and backward passes are hand-written per layer kind, training is
//! plain SGD with momentum, and everything runs in `f64` so that gradients
//! can be validated against central finite differences. The engine is sized
//! for small 1D-CNN students and 1D/2D-CNN teachers, not for generality.

pub mod checkpoint;
pub mod flops;
pub mod gradcheck;
mod layer;
mod network;
pub mod optim;
pub mod presets;
mod tensor;

pub use checkpoint::{
    interpolate_params, load_checkpoint, params_digest, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use flops::count_flops;
pub use layer::{grads_zeros_like, scale_add_grads, LayerGrads, LayerParams, LayerSpec};
pub use network::{scale_grads, Cache, Gradients, Mode, Network, Parameters};
pub use optim::{lr_at, sgd_step, LRSchedule, ScheduleKind, SgdConfig};
pub use presets::{ArchFamily, ArchId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {index} ({kind}): {detail}")]
    BadLayer {
        index: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("input shape {got:?} does not match expected {expected:?}")]
    BadInput {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("cache does not match network ({0})")]
    CacheMismatch(String),
    #[error("architectures do not match: {0}")]
    ArchMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("epoch {epoch} out of range for schedule of {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("unknown architecture '{0}'")]
    UnknownArch(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
