//! On-disk dataset layout. One directory per scene, `scene_00000` onward:
//!
//! ```text
//! vehicle.raw     vehicle view, raster raw dump (see crate::raster)
//! infra.raw       infrastructure view, same format
//! prompt.txt      four lines: `brief: …`, `detailed: …`, `ego_position: (x, y)`, `task: …`
//! trajectory.txt  one waypoint per line: `x y` as shortest round-trip decimals
//! scene.json      the scene state (agents, ego, maneuver, seed)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{generate_scene, GeneratedScene, Maneuver, Scene, ScenePrompt};
use crate::model::Waypoint;
use crate::numerics::RngSeed;
use crate::raster::{RasterError, RasterImage};

pub type Sample = GeneratedScene;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Raster {
        path: PathBuf,
        #[source]
        source: RasterError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("no scenes found under {0}")]
    Empty(PathBuf),
}

/// `n` scenes cycling through the maneuvers; scene `i` uses `seed.derive(i)`.
pub fn generate_dataset(n: usize, seed: RngSeed) -> Vec<Sample> {
    (0..n)
        .map(|i| generate_scene(Maneuver::ALL[i % 3], seed.derive(i as u64)))
        .collect()
}

/// Share of scenes held out from training.
pub const HELD_OUT_FRACTION: f64 = 0.2;

/// Leading scenes train, the trailing [`HELD_OUT_FRACTION`] are held out.
pub fn split_held_out(samples: &[Sample]) -> (&[Sample], &[Sample]) {
    let held = (samples.len() as f64 * HELD_OUT_FRACTION).round() as usize;
    samples.split_at(samples.len() - held.min(samples.len()))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn raster_bytes(path: &Path, img: &RasterImage) -> Result<Vec<u8>, DatasetError> {
    img.to_raw().map_err(|source| DatasetError::Raster {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    for (i, s) in samples.iter().enumerate() {
        let sd = dir.join(format!("scene_{i:05}"));
        fs::create_dir_all(&sd).map_err(io(&sd))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = sd.join(name);
            fs::write(&p, bytes).map_err(io(&p))
        };
        write("vehicle.raw", &raster_bytes(&sd, &s.vehicle)?)?;
        write("infra.raw", &raster_bytes(&sd, &s.infra)?)?;
        let p = &s.prompt;
        write(
            "prompt.txt",
            format!(
                "brief: {}\ndetailed: {}\nego_position: {}\ntask: {}\n",
                p.brief, p.detailed, p.ego_position, p.task
            )
            .as_bytes(),
        )?;
        let traj: String = s.trajectory.iter().map(|w| format!("{} {}\n", w.x, w.y)).collect();
        write("trajectory.txt", traj.as_bytes())?;
        let json = serde_json::to_vec_pretty(&s.scene).map_err(|source| DatasetError::Json {
            path: sd.join("scene.json"),
            source,
        })?;
        write("scene.json", &json)?;
    }
    Ok(())
}

fn parse_err(path: &Path, msg: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(io(path))
}

fn read_raster(path: &Path) -> Result<RasterImage, DatasetError> {
    let bytes = fs::read(path).map_err(io(path))?;
    RasterImage::from_raw(&bytes).map_err(|source| DatasetError::Raster {
        path: path.to_path_buf(),
        source,
    })
}

fn read_prompt(path: &Path) -> Result<ScenePrompt, DatasetError> {
    let text = read_text(path)?;
    let mut fields = [None, None, None, None];
    for line in text.lines() {
        let (key, value) = line
            .split_once(": ")
            .ok_or_else(|| parse_err(path, format!("bad line {line:?}")))?;
        let slot = match key {
            "brief" => 0,
            "detailed" => 1,
            "ego_position" => 2,
            "task" => 3,
            other => return Err(parse_err(path, format!("unknown field {other}"))),
        };
        fields[slot] = Some(value.to_string());
    }
    let [brief, detailed, ego_position, task] = fields;
    let missing = || parse_err(path, "missing prompt field");
    Ok(ScenePrompt {
        brief: brief.ok_or_else(missing)?,
        detailed: detailed.ok_or_else(missing)?,
        ego_position: ego_position.ok_or_else(missing)?,
        task: task.ok_or_else(missing)?,
    })
}

fn read_trajectory(path: &Path) -> Result<Vec<Waypoint>, DatasetError> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => Ok(Waypoint::new(x, y)),
                _ => Err(parse_err(path, format!("bad waypoint line {l:?}"))),
            }
        })
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>, DatasetError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("scene_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(DatasetError::Empty(dir.to_path_buf()));
    }
    dirs.iter()
        .map(|sd| {
            let json_path = sd.join("scene.json");
            let scene: Scene = serde_json::from_str(&read_text(&json_path)?).map_err(|source| DatasetError::Json {
                path: json_path.clone(),
                source,
            })?;
            Ok(Sample {
                vehicle: read_raster(&sd.join("vehicle.raw"))?,
                infra: read_raster(&sd.join("infra.raw"))?,
                prompt: read_prompt(&sd.join("prompt.txt"))?,
                trajectory: read_trajectory(&sd.join("trajectory.txt"))?,
                scene,
            })
        })
        .collect()
}
