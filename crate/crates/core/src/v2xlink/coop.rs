//! The two-task cooperative inference flow. Task-A describes the scene on
//! the vehicle while Task-B prepares and transmits the roadside frame; the
//! vehicle joins both before running the planner.

use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::frame::{decode_frame, encode_frame, FrameMeta};
use super::link::{check_scale, downsample, upsample};
use super::transport::Transport;
use super::LinkError;
use crate::evalkit::refine_trajectory;
use crate::model::{concat_views, detokenize_trajectory, Model, TextTokenizer, TrajectoryTokens, Waypoint};
use crate::numerics::RngSeed;
use crate::raster::RasterImage;
use crate::scenario::{build_prompt, perturb_image, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadsideConfig {
    pub scale: f64,
    /// Gaussian noise added before encoding, in intensity units.
    pub noise_std: f64,
    pub seed: RngSeed,
    pub frame_id: u64,
    pub timestamp_us: u64,
}

impl Default for RoadsideConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            noise_std: 0.0,
            seed: RngSeed(0),
            frame_id: 0,
            timestamp_us: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleConfig {
    /// How long the vehicle waits for the roadside frame.
    pub deadline: Duration,
    /// Size the received infrastructure view is restored to.
    pub infra_dims: (usize, usize),
    pub refine: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutput {
    pub prompt: String,
    pub tokens: TrajectoryTokens,
    pub raw: Vec<Waypoint>,
    /// Refined waypoints, or `raw` when refinement is off.
    pub trajectory: Vec<Waypoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoopOutput {
    pub plan: PlanOutput,
    pub meta: FrameMeta,
    pub payload_bytes: usize,
}

/// The image the roadside puts on the wire: optional noise, then downsampling.
pub fn roadside_payload(infra: &RasterImage, cfg: &RoadsideConfig) -> Result<RasterImage, LinkError> {
    check_scale(cfg.scale)?;
    let noisy = if cfg.noise_std > 0.0 {
        perturb_image(infra, cfg.noise_std, cfg.seed)
    } else {
        infra.clone()
    };
    downsample(&noisy, cfg.scale)
}

/// Task-B: prepare, encode and send one frame. Returns the payload size.
pub fn roadside_send(transport: &mut dyn Transport, infra: &RasterImage, cfg: &RoadsideConfig) -> Result<usize, LinkError> {
    let img = roadside_payload(infra, cfg)?;
    let bytes = encode_frame(&img, &FrameMeta::new(cfg.frame_id, cfg.timestamp_us, cfg.scale))?;
    transport.send(&bytes)?;
    Ok(img.data().len())
}

pub fn spawn_roadside<T: Transport + 'static>(
    mut transport: T,
    infra: RasterImage,
    cfg: RoadsideConfig,
) -> JoinHandle<Result<usize, LinkError>> {
    thread::spawn(move || roadside_send(&mut transport, &infra, &cfg))
}

/// Template stand-in for the vehicle's scene describer.
pub fn template_describer(scene: &Scene) -> impl Fn(&RasterImage) -> String + Sync + '_ {
    move |_vehicle: &RasterImage| build_prompt(scene).full_text()
}

/// Vehicle-side steps after synchronization: fuse views, tokenize, decode,
/// detokenize, refine.
pub fn plan(
    model: &Model,
    tokenizer: &TextTokenizer,
    vehicle: &RasterImage,
    infra: &RasterImage,
    text: &str,
    refine: bool,
) -> Result<PlanOutput, LinkError> {
    let image = concat_views(vehicle, infra)?;
    let prompt = tokenizer.encode(text, model.config().max_prompt_len)?;
    let tokens = model.greedy_decode(&image, &prompt)?;
    let raw = detokenize_trajectory(&tokens, model.config())?;
    let trajectory = if refine { refine_trajectory(&raw)? } else { raw.clone() };
    Ok(PlanOutput {
        prompt: text.to_string(),
        tokens,
        raw,
        trajectory,
    })
}

/// The same steps as [`cooperative_infer`] run in one thread without a link.
pub fn sequential_infer(
    model: &Model,
    tokenizer: &TextTokenizer,
    vehicle: &RasterImage,
    infra: &RasterImage,
    text: &str,
    roadside: &RoadsideConfig,
    refine: bool,
) -> Result<PlanOutput, LinkError> {
    let sent = roadside_payload(infra, roadside)?;
    let restored = upsample(&sent, infra.height(), infra.width())?;
    plan(model, tokenizer, vehicle, &restored, text, refine)
}

/// Vehicle endpoint: spawns the describer, waits for the roadside frame up
/// to the deadline, joins both and plans.
pub fn cooperative_infer(
    transport: &mut dyn Transport,
    vehicle: &RasterImage,
    describe: &(dyn Fn(&RasterImage) -> String + Sync),
    model: &Model,
    tokenizer: &TextTokenizer,
    cfg: &VehicleConfig,
) -> Result<CoopOutput, LinkError> {
    let (text, frame) = thread::scope(|s| {
        let task_a = s.spawn(|| describe(vehicle));
        let frame = transport.recv(cfg.deadline);
        (task_a.join(), frame)
    });
    let text = text.map_err(|_| LinkError::TaskPanicked("describer"))?;
    let (sent, meta) = decode_frame(&frame?)?;
    let (h, w) = cfg.infra_dims;
    let restored = upsample(&sent, h, w)?;
    let plan = plan(model, tokenizer, vehicle, &restored, &text, cfg.refine)?;
    Ok(CoopOutput {
        plan,
        meta,
        payload_bytes: sent.data().len(),
    })
}
