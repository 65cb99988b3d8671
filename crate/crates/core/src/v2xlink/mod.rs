//! Vehicle–infrastructure link: bandwidth model, resampling of the roadside
//! view, the frame codec, transports and the cooperative inference flow.

mod coop;
mod frame;
mod link;
mod transport;

pub use coop::{
    cooperative_infer, plan, roadside_payload, roadside_send, sequential_infer, spawn_roadside, template_describer,
    CoopOutput, PlanOutput, RoadsideConfig, VehicleConfig,
};
pub use frame::{decode_frame, encode_frame, read_frame, FrameError, FrameMeta, FRAME_MAGIC, FRAME_VERSION, HEADER_LEN};
pub use link::{bps, downsample, format_sci3, upsample, LinkConfig};
pub use transport::{channel_pair, listen_loopback, tcp_pair, ChannelTransport, TcpTransport, Transport};

use std::time::Duration;

use thiserror::Error;

use crate::evalkit::EvalError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("downsampling factor must lie in (0, 1], got {0}")]
    InvalidScale(f64),
    #[error("invalid link config: {0}")]
    InvalidConfig(String),
    #[error("resampling to {height}x{width} leaves no pixels")]
    DegenerateDimensions { height: usize, width: usize },
    #[error("frame decode failed: {0}")]
    DecodeFailure(#[from] FrameError),
    #[error("peer sent nothing within {0:?}")]
    PeerTimeout(Duration),
    #[error("peer disconnected")]
    PeerDisconnected,
    #[error("{0} task panicked")]
    TaskPanicked(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
