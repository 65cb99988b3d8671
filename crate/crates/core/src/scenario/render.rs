//! Flat-shaded rasterization of a [`Scene`] into the two camera views.

use super::{AgentKind, Maneuver, Scene, BUILDING_INNER, ROAD_HALF_WIDTH};
use crate::model::Waypoint;
use crate::raster::RasterImage;

pub const VIEW_HEIGHT: usize = 64;
pub const VIEW_WIDTH: usize = 96;

const BACKGROUND: [u8; 3] = [70, 110, 60];
const ROAD: [u8; 3] = [60, 60, 60];
const LANE: [u8; 3] = [200, 200, 200];
const CENTER_LINE: [u8; 3] = [220, 200, 40];
const BUILDING: [u8; 3] = [140, 90, 60];
const VEHICLE: [u8; 3] = [40, 90, 220];
const PEDESTRIAN: [u8; 3] = [230, 110, 220];
const EGO: [u8; 3] = [220, 30, 30];
const TRAIL: [u8; 3] = [240, 140, 140];
const ARROW: [u8; 3] = [255, 255, 255];

/// Infrastructure camera window in world meters.
pub const INFRA_X: (f64, f64) = (-24.0, 24.0);
pub const INFRA_Y: (f64, f64) = (-20.0, 12.0);
const INFRA_PPM: f64 = 2.0;

/// Vehicle view: ±16 m lateral, 0 to 64/3 m ahead.
pub const VEHICLE_LATERAL: f64 = 16.0;
const VEHICLE_PPM: f64 = 3.0;

struct Canvas {
    img: RasterImage,
    x_min: f64,
    y_max: f64,
    ppm: f64,
}

impl Canvas {
    fn new(x_min: f64, y_max: f64, ppm: f64) -> Self {
        let mut img = RasterImage::filled(VIEW_HEIGHT, VIEW_WIDTH, 3, 0);
        for r in 0..VIEW_HEIGHT {
            for c in 0..VIEW_WIDTH {
                img.put(r, c, &BACKGROUND);
            }
        }
        Self { img, x_min, y_max, ppm }
    }

    fn world(&self, r: usize, c: usize) -> (f64, f64) {
        (
            self.x_min + (c as f64 + 0.5) / self.ppm,
            self.y_max - (r as f64 + 0.5) / self.ppm,
        )
    }

    fn paint(&mut self, color: [u8; 3], inside: impl Fn(f64, f64) -> bool) {
        for r in 0..VIEW_HEIGHT {
            for c in 0..VIEW_WIDTH {
                let (x, y) = self.world(r, c);
                if inside(x, y) {
                    self.img.put(r, c, &color);
                }
            }
        }
    }

    fn rect(&mut self, color: [u8; 3], x0: f64, x1: f64, y0: f64, y1: f64) {
        self.paint(color, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1);
    }

    fn disc(&mut self, color: [u8; 3], cx: f64, cy: f64, radius: f64) {
        // Never vanish below one pixel.
        let r = radius.max(0.5 / self.ppm);
        self.paint(color, |x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r * r);
    }

    fn roads(&mut self) {
        let w = ROAD_HALF_WIDTH;
        self.rect(ROAD, -1e3, 1e3, -w, w);
        self.rect(ROAD, -w, w, -1e3, 1e3);
        let b = BUILDING_INNER;
        for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
            let (xa, xb) = if sx > 0.0 { (b, 1e3) } else { (-1e3, -b) };
            let (ya, yb) = if sy > 0.0 { (b, 1e3) } else { (-1e3, -b) };
            self.rect(BUILDING, xa, xb, ya, yb);
        }
        let t = 0.5 / self.ppm;
        // Center lines outside the box, dashed lane separators at ±3.5 m.
        for (lo, hi) in [(-1e3, -w), (w, 1e3)] {
            self.rect(CENTER_LINE, -t, t, lo, hi);
            self.rect(CENTER_LINE, lo, hi, -t, t);
        }
        self.paint(LANE, |x, y| {
            let dash = |v: f64| v.rem_euclid(4.0) < 2.0;
            let vertical = y.abs() > w && ((x - 3.5).abs() < t || (x + 3.5).abs() < t) && dash(y);
            let horizontal = x.abs() > w && ((y - 3.5).abs() < t || (y + 3.5).abs() < t) && dash(x);
            vertical || horizontal
        });
    }
}

/// Top-down fixed camera covering the whole approach, with the ego's recent
/// path drawn as a trail whose length is one second of travel.
pub fn render_infra(scene: &Scene) -> RasterImage {
    let mut c = Canvas::new(INFRA_X.0, INFRA_Y.1, INFRA_PPM);
    c.roads();
    let e = scene.ego.position;
    let trail = scene.ego.speed;
    c.rect(TRAIL, e.x - 0.5, e.x + 0.5, e.y - trail, e.y);
    for a in &scene.agents {
        c.disc(color(a.kind), a.position.x, a.position.y, a.radius);
    }
    c.rect(EGO, e.x - 0.9, e.x + 0.9, e.y - 1.0, e.y + 1.5);
    c.img
}

fn color(kind: AgentKind) -> [u8; 3] {
    match kind {
        AgentKind::Vehicle => VEHICLE,
        AgentKind::Pedestrian => PEDESTRIAN,
    }
}

fn segment_hits_rect(a: Waypoint, b: Waypoint, x0: f64, x1: f64, y0: f64, y1: f64) -> bool {
    // Liang–Barsky clip.
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [(-dx, a.x - x0), (dx, x1 - a.x), (-dy, a.y - y0), (dy, y1 - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    t0 <= t1
}

fn segment_point_dist(a: Waypoint, b: Waypoint, p: Waypoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    Waypoint::new(a.x + t * dx, a.y + t * dy).dist(&p)
}

/// Agents the vehicle camera can see: inside the forward window, with a
/// line of sight not blocked by a building block or a nearer agent.
pub fn visible_agents(scene: &Scene) -> Vec<usize> {
    let e = scene.ego.position;
    let b = BUILDING_INNER;
    let blocks = [(b, 1e3, b, 1e3), (-1e3, -b, b, 1e3), (b, 1e3, -1e3, -b), (-1e3, -b, -1e3, -b)];
    let mut out = Vec::new();
    for (i, a) in scene.agents.iter().enumerate() {
        let p = a.position;
        let ahead = p.y - e.y;
        if (p.x - e.x).abs() >= VEHICLE_LATERAL || ahead < 0.0 || ahead >= VIEW_HEIGHT as f64 / VEHICLE_PPM {
            continue;
        }
        if blocks.iter().any(|&(x0, x1, y0, y1)| segment_hits_rect(e, p, x0, x1, y0, y1)) {
            continue;
        }
        let d = e.dist(&p);
        let shadowed = scene.agents.iter().enumerate().any(|(j, o)| {
            j != i && e.dist(&o.position) + o.radius < d && segment_point_dist(e, p, o.position) < o.radius
        });
        if !shadowed {
            out.push(i);
        }
    }
    out
}

/// Ego-centric forward view. Visible agents are painted far to near; a
/// white arrow painted in the ego lane ahead shows the maneuver.
pub fn render_vehicle(scene: &Scene) -> RasterImage {
    let e = scene.ego.position;
    let mut c = Canvas::new(e.x - VEHICLE_LATERAL, e.y + VIEW_HEIGHT as f64 / VEHICLE_PPM, VEHICLE_PPM);
    c.roads();
    let (ax, ay) = (e.x, e.y + 4.0);
    c.rect(ARROW, ax - 0.3, ax + 0.3, ay, ay + 3.0);
    match scene.maneuver {
        Maneuver::Straight => c.rect(ARROW, ax - 0.8, ax + 0.8, ay + 3.0, ay + 4.0),
        Maneuver::LeftTurn => c.rect(ARROW, ax - 2.0, ax, ay + 2.4, ay + 3.0),
        Maneuver::RightTurn => c.rect(ARROW, ax, ax + 2.0, ay + 2.4, ay + 3.0),
    }
    let mut vis = visible_agents(scene);
    vis.sort_by(|&i, &j| {
        let di = e.dist(&scene.agents[i].position);
        let dj = e.dist(&scene.agents[j].position);
        dj.total_cmp(&di).then(i.cmp(&j))
    });
    for i in vis {
        let a = &scene.agents[i];
        c.disc(color(a.kind), a.position.x, a.position.y, a.radius);
    }
    c.rect(EGO, e.x - 0.9, e.x + 0.9, e.y, e.y + 1.5);
    c.img
}
