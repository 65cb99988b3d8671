//! Synthetic cooperative scenes around a four-way intersection centered at
//! the origin. The ego drives north (+y) on the right-hand side, then goes
//! straight or turns. Roads are 14 m wide with two 3.5 m lanes per
//! direction; building blocks fill the corners.
//!
//! Each scene yields a forward vehicle view, a top-down infrastructure view,
//! a template prompt and a nine-waypoint ground-truth trajectory sampled
//! every 0.5 s along a constant-speed arc path.

mod dataset;
mod prompt;
mod render;

pub use dataset::{
    generate_dataset, load_dataset, save_dataset, split_held_out, DatasetError, Sample, HELD_OUT_FRACTION,
};
pub use prompt::{
    build_prompt, format_position, parse_position, perturb_text, perturb_text_counted, speed_bucket, vocabulary,
    ScenePrompt, TASKS,
};
pub use render::{render_infra, render_vehicle, visible_agents, VIEW_HEIGHT, VIEW_WIDTH};

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::model::{Waypoint, HORIZON};
use crate::numerics::{RngSeed, SplitMix64};
use crate::raster::RasterImage;

pub const DT: f64 = 0.5;
pub const ROAD_HALF_WIDTH: f64 = 7.0;
pub const BUILDING_INNER: f64 = 8.0;
pub const STOP_LINE_Y: f64 = -7.0;
pub const WORLD_MIN: f64 = -32.0;
pub const WORLD_MAX: f64 = 32.0;

const LEFT_RADIUS: f64 = 6.0;
const LEFT_ENTRY_Y: f64 = 1.75 - LEFT_RADIUS;
const RIGHT_RADIUS: f64 = 3.5;
const RIGHT_ENTRY_Y: f64 = -8.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Maneuver {
    Straight,
    LeftTurn,
    RightTurn,
}

impl Maneuver {
    pub const ALL: [Maneuver; 3] = [Maneuver::Straight, Maneuver::LeftTurn, Maneuver::RightTurn];

    pub fn name(self) -> &'static str {
        match self {
            Maneuver::Straight => "straight",
            Maneuver::LeftTurn => "left-turn",
            Maneuver::RightTurn => "right-turn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub kind: AgentKind,
    pub position: Waypoint,
    /// m/s
    pub velocity: Waypoint,
    pub radius: f64,
}

impl Agent {
    /// Constant-velocity position `t` seconds after the scene snapshot.
    pub fn position_at(&self, t: f64) -> Waypoint {
        Waypoint::new(self.position.x + self.velocity.x * t, self.position.y + self.velocity.y * t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ego {
    pub position: Waypoint,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
    /// m/s
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub agents: Vec<Agent>,
    pub ego: Ego,
    pub maneuver: Maneuver,
    pub seed: RngSeed,
}

/// Everything [`generate_scene`] produces.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub scene: Scene,
    pub vehicle: RasterImage,
    pub infra: RasterImage,
    pub prompt: ScenePrompt,
    pub trajectory: Vec<Waypoint>,
}

/// Point reached after travelling `s` meters along the maneuver path.
pub fn path_point(maneuver: Maneuver, start: Waypoint, s: f64) -> Waypoint {
    let Waypoint { x: x0, y: y0 } = start;
    let (radius, entry) = match maneuver {
        Maneuver::Straight => return Waypoint::new(x0, y0 + s),
        Maneuver::LeftTurn => (LEFT_RADIUS, LEFT_ENTRY_Y),
        Maneuver::RightTurn => (RIGHT_RADIUS, RIGHT_ENTRY_Y),
    };
    let pre = entry - y0;
    if s <= pre {
        return Waypoint::new(x0, y0 + s);
    }
    let arc = radius * FRAC_PI_2;
    let side = if maneuver == Maneuver::LeftTurn { -1.0 } else { 1.0 };
    let cx = x0 + side * radius;
    if s <= pre + arc {
        let th = (s - pre) / radius;
        return Waypoint::new(cx - side * radius * th.cos(), entry + radius * th.sin());
    }
    Waypoint::new(cx + side * (s - pre - arc), entry + radius)
}

pub fn ground_truth(scene: &Scene) -> Vec<Waypoint> {
    (1..=HORIZON)
        .map(|k| path_point(scene.maneuver, scene.ego.position, scene.ego.speed * DT * k as f64))
        .collect()
}

/// Straight-line extrapolation at the current speed and heading.
pub fn constant_velocity(ego: &Ego, steps: usize) -> Vec<Waypoint> {
    (1..=steps)
        .map(|k| {
            let d = ego.speed * DT * k as f64;
            Waypoint::new(ego.position.x + d * ego.heading.cos(), ego.position.y + d * ego.heading.sin())
        })
        .collect()
}

fn grid(rng: &mut SplitMix64, lo: f64, hi: f64) -> f64 {
    let steps = ((hi - lo) / 0.5).round() as usize;
    lo + 0.5 * rng.below(steps + 1) as f64
}

/// Builds the scene state for `maneuver` from `seed`.
pub fn sample_scene(maneuver: Maneuver, seed: RngSeed) -> Scene {
    let mut rng = SplitMix64::new(seed.derive(0x7363_656e65));
    let speed = rng.uniform(4.0, 7.0);
    let (x0, y0) = match maneuver {
        Maneuver::Straight => {
            let lane = if rng.bernoulli(0.5) { 1.0 } else { 4.5 };
            (lane + grid(&mut rng, 0.0, 1.5), grid(&mut rng, -16.0, -8.0))
        }
        Maneuver::LeftTurn => (grid(&mut rng, 1.0, 2.5), grid(&mut rng, -10.5, -8.5)),
        Maneuver::RightTurn => (grid(&mut rng, 4.5, 6.0), grid(&mut rng, -15.0, -13.0)),
    };
    let ego = Ego {
        position: Waypoint::new(x0, y0),
        heading: FRAC_PI_2,
        speed,
    };

    let mut agents = Vec::new();
    let vehicle = |x: f64, y: f64, vx: f64, vy: f64, r: f64| Agent {
        kind: AgentKind::Vehicle,
        position: Waypoint::new(x, y),
        velocity: Waypoint::new(vx, vy),
        radius: r,
    };
    // Queued cross traffic beyond the vehicle camera's lateral reach; at
    // least one such agent is always present.
    let far = 1 + rng.below(2);
    for _ in 0..far {
        let east_queue = rng.bernoulli(0.5);
        let lane = if rng.bernoulli(0.5) { 1.75 } else { 5.25 };
        let x = rng.uniform(18.0, 23.0);
        let r = rng.uniform(1.0, 1.5);
        agents.push(if east_queue {
            vehicle(-x, -lane, 0.0, 0.0, r)
        } else {
            vehicle(x, lane, 0.0, 0.0, r)
        });
    }
    // Cross traffic waiting close to the junction.
    for _ in 0..rng.below(3) {
        let east_queue = rng.bernoulli(0.5);
        let lane = if rng.bernoulli(0.5) { 1.75 } else { 5.25 };
        let x = rng.uniform(9.0, 15.0);
        let r = rng.uniform(1.0, 1.5);
        agents.push(if east_queue {
            vehicle(-x, -lane, 0.0, 0.0, r)
        } else {
            vehicle(x, lane, 0.0, 0.0, r)
        });
    }
    // Oncoming traffic waiting on the far side.
    for _ in 0..rng.below(3) {
        let lane = if rng.bernoulli(0.5) { -1.75 } else { -5.25 };
        agents.push(vehicle(lane, rng.uniform(9.0, 20.0), 0.0, 0.0, rng.uniform(1.0, 1.5)));
    }
    // A faster lead vehicle in the ego lane.
    if rng.bernoulli(0.4) {
        let gap = rng.uniform(8.0, 14.0);
        let v = speed + rng.uniform(0.5, 2.0);
        agents.push(vehicle(x0, y0 + gap, 0.0, v, 1.2));
    }
    for _ in 0..rng.below(4) {
        let along = if rng.bernoulli(0.5) {
            rng.uniform(-20.0, -9.0)
        } else {
            rng.uniform(9.0, 20.0)
        };
        let side = if rng.bernoulli(0.5) { 7.5 } else { -7.5 };
        let (x, y) = if rng.bernoulli(0.5) { (side, along) } else { (along, side) };
        agents.push(Agent {
            kind: AgentKind::Pedestrian,
            position: Waypoint::new(x, y),
            velocity: Waypoint::default(),
            radius: 0.4,
        });
    }

    Scene {
        agents,
        ego,
        maneuver,
        seed,
    }
}

pub fn generate_scene(maneuver: Maneuver, seed: RngSeed) -> GeneratedScene {
    let scene = sample_scene(maneuver, seed);
    GeneratedScene {
        vehicle: render_vehicle(&scene),
        infra: render_infra(&scene),
        prompt: build_prompt(&scene),
        trajectory: ground_truth(&scene),
        scene,
    }
}

/// Adds i.i.d. `N(0, std²)` noise per byte and clamps to `[0, 255]`.
pub fn perturb_image(img: &RasterImage, std: f64, seed: RngSeed) -> RasterImage {
    if std <= 0.0 {
        return img.clone();
    }
    let mut rng = SplitMix64::new(seed.derive(0x6e6f_697365));
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v as f64 + std * rng.normal()).round().clamp(0.0, 255.0) as u8;
    }
    out
}
