//! The tiny multimodal encoder–decoder: patch encoder over the width-wise
//! composite of both camera views, prompt encoder, vision→text cross-attention
//! fusion, and a coordinate-token decoder that cross-attends to the fused
//! memory. Gradients come from the reverse-mode [`tape`].

pub mod checkpoint;
mod config;
mod network;
mod params;
pub mod tape;
mod text;
mod trajectory;

pub use config::{ModelConfig, BIN_SIZE, COORD_BINS, COORD_MIN, HORIZON};
pub use network::{patchify, ForwardOutput, GraphMode, GraphNodes, Model, VisionInput, VISION_PREFIX};
pub(crate) use network::{attention_apply, attention_kv};
pub use params::{Grads, ParamId, ParamStore};
pub use text::{split_words, PromptTokens, TextTokenizer, OOV, OOV_ID};
pub use trajectory::{
    bin_to_coord, coord_to_bin, detokenize_trajectory, tokenize_trajectory, wrap_coordinates, TrajectoryTokens,
    Waypoint,
};

use thiserror::Error;

use crate::raster::RasterImage;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("view heights differ: vehicle {vehicle}, infrastructure {infra}")]
    HeightMismatch { vehicle: usize, infra: usize },
    #[error("view channel counts differ: vehicle {vehicle}, infrastructure {infra}")]
    ChannelMismatch { vehicle: usize, infra: usize },
    #[error("{height}x{width} image does not tile into {patch}-pixel patches")]
    IndivisiblePatchGrid { height: usize, width: usize, patch: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("prompt of {len} tokens exceeds the maximum of {max}")]
    PromptTooLong { len: usize, max: usize },
    #[error("token id {id} outside a text vocabulary of {vocab}")]
    UnknownTokenId { id: usize, vocab: usize },
    #[error("waypoint {index} has coordinate {value} outside the quantization range")]
    OutOfRangeCoordinate { index: usize, value: f64 },
    #[error("malformed trajectory tokens: {0}")]
    MalformedTokenSequence(String),
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("forward pass produced non-finite logits")]
    NonFiniteLogits,
}

/// Vehicle view on the left, infrastructure view on the right, three channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeImage {
    image: RasterImage,
    vehicle_width: usize,
}

impl CompositeImage {
    pub fn image(&self) -> &RasterImage {
        &self.image
    }

    pub fn vehicle_width(&self) -> usize {
        self.vehicle_width
    }

    pub fn infra_width(&self) -> usize {
        self.image.width() - self.vehicle_width
    }
}

/// Concatenates the two views along the width.
pub fn concat_views(vehicle: &RasterImage, infra: &RasterImage) -> Result<CompositeImage, ModelError> {
    if vehicle.channels() != 3 || (infra.width() > 0 && infra.channels() != vehicle.channels()) {
        return Err(ModelError::ChannelMismatch {
            vehicle: vehicle.channels(),
            infra: infra.channels(),
        });
    }
    if infra.width() > 0 && infra.height() != vehicle.height() {
        return Err(ModelError::HeightMismatch {
            vehicle: vehicle.height(),
            infra: infra.height(),
        });
    }
    let (h, wv, wi, c) = (vehicle.height(), vehicle.width(), infra.width(), vehicle.channels());
    let mut data = Vec::with_capacity(h * (wv + wi) * c);
    for r in 0..h {
        data.extend_from_slice(&vehicle.data()[r * wv * c..(r + 1) * wv * c]);
        if wi > 0 {
            data.extend_from_slice(&infra.data()[r * wi * c..(r + 1) * wi * c]);
        }
    }
    let image = RasterImage::new(h, wv + wi, c, data).expect("composite buffer size");
    Ok(CompositeImage {
        image,
        vehicle_width: wv,
    })
}
