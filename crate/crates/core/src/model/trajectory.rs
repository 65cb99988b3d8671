//! Coordinate-bin serialization of waypoint sequences.
//!
//! x and y share one vocabulary: bin `k` covers `[COORD_MIN + k·BIN_SIZE,
//! COORD_MIN + (k+1)·BIN_SIZE)` and decodes to its center. Ids past the bins
//! are BOS, EOS and PAD in that order.

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, BIN_SIZE, COORD_MIN};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Waypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryTokens {
    pub ids: Vec<usize>,
}

impl TrajectoryTokens {
    /// Teacher-forcing decoder input: BOS followed by every coordinate but the last.
    pub fn decoder_input(&self) -> &[usize] {
        &self.ids[..self.ids.len() - 2]
    }

    /// Next-token targets: every coordinate, EOS excluded.
    pub fn targets(&self) -> &[usize] {
        &self.ids[1..self.ids.len() - 1]
    }
}

pub fn coord_to_bin(v: f64, bins: usize) -> Option<usize> {
    if !v.is_finite() {
        return None;
    }
    let k = ((v - COORD_MIN) / BIN_SIZE).floor();
    if k < 0.0 || k >= bins as f64 {
        None
    } else {
        Some(k as usize)
    }
}

pub fn bin_to_coord(bin: usize) -> f64 {
    COORD_MIN + (bin as f64 + 0.5) * BIN_SIZE
}

pub fn tokenize_trajectory(traj: &[Waypoint], cfg: &ModelConfig) -> Result<TrajectoryTokens, ModelError> {
    let mut ids = Vec::with_capacity(2 * traj.len() + 2);
    ids.push(cfg.bos());
    for (i, w) in traj.iter().enumerate() {
        for v in [w.x, w.y] {
            let bin = coord_to_bin(v, cfg.coord_bins).ok_or(ModelError::OutOfRangeCoordinate { index: i, value: v })?;
            ids.push(bin);
        }
    }
    ids.push(cfg.eos());
    Ok(TrajectoryTokens { ids })
}

pub fn detokenize_trajectory(tokens: &TrajectoryTokens, cfg: &ModelConfig) -> Result<Vec<Waypoint>, ModelError> {
    let ids = &tokens.ids;
    let malformed = |why: &str| Err(ModelError::MalformedTokenSequence(why.to_string()));
    if ids.first() != Some(&cfg.bos()) {
        return malformed("missing BOS");
    }
    if ids.len() < 2 || ids.last() != Some(&cfg.eos()) {
        return malformed("missing EOS");
    }
    let body = &ids[1..ids.len() - 1];
    if !body.len().is_multiple_of(2) {
        return malformed("odd coordinate count");
    }
    if let Some(bad) = body.iter().find(|&&id| id >= cfg.coord_bins) {
        return Err(ModelError::MalformedTokenSequence(format!("non-coordinate id {bad} inside body")));
    }
    Ok(body
        .chunks(2)
        .map(|c| Waypoint::new(bin_to_coord(c[0]), bin_to_coord(c[1])))
        .collect())
}

/// Wraps raw greedy-decoded coordinate ids with BOS/EOS.
pub fn wrap_coordinates(coords: &[usize], cfg: &ModelConfig) -> TrajectoryTokens {
    let mut ids = Vec::with_capacity(coords.len() + 2);
    ids.push(cfg.bos());
    ids.extend_from_slice(coords);
    ids.push(cfg.eos());
    TrajectoryTokens { ids }
}
