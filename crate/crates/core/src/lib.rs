//! Desk-scale cooperative driving stack: a small multimodal encoder–decoder
//! trained with trajectory, alignment and distillation losses, a simulated
//! vehicle–infrastructure image link, attention FLOP accounting and an
//! evaluation harness.

pub mod evalkit;
pub mod flops;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod raster;
pub mod scenario;
pub mod trainer;
pub mod v2xlink;

pub use evalkit::{EvalError, EvalOptions, EvalSummary, HorizonMetrics, HorizonSpec};
pub use flops::{FlopError, FlopSpec};
pub use losses::{LossError, LossWeights};
pub use model::checkpoint::CheckpointError;
pub use model::{Model, ModelConfig, ModelError, TextTokenizer};
pub use numerics::{NumericsError, RngSeed, Tensor2D};
pub use raster::{RasterError, RasterImage};
pub use scenario::{DatasetError, Sample};
pub use trainer::{TrainConfig, TrainError, TrainReport};
pub use v2xlink::{FrameError, LinkConfig, LinkError};

use thiserror::Error;

/// Any failure surfaced by the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Flop(#[from] FlopError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
