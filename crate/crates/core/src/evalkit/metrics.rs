use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::Waypoint;
use crate::scenario::{Scene, DT};

/// Default ego footprint radius in meters.
pub const EGO_RADIUS: f64 = 1.0;
/// Speed above which a step between waypoints is treated as an outlier.
pub const V_MAX: f64 = 20.0;

/// Evaluation horizons as 1-based waypoint indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub indices: Vec<usize>,
}

impl Default for HorizonSpec {
    /// 2.5 s, 3.5 s and 4.5 s at 0.5 s spacing.
    fn default() -> Self {
        Self { indices: vec![5, 7, 9] }
    }
}

impl HorizonSpec {
    pub fn new(indices: Vec<usize>) -> Result<Self, EvalError> {
        if indices.is_empty() || indices.contains(&0) {
            return Err(EvalError::InvalidHorizon(indices));
        }
        Ok(Self { indices })
    }

    pub fn times(&self) -> Vec<f64> {
        self.indices.iter().map(|&i| i as f64 * DT).collect()
    }

    fn max_index(&self) -> usize {
        self.indices.iter().copied().max().unwrap_or(0)
    }
}

/// One value per horizon and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub values: Vec<f64>,
    pub avg: f64,
}

impl HorizonMetrics {
    pub fn from_values(values: Vec<f64>) -> Self {
        let avg = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        Self { values, avg }
    }

    /// Element-wise mean of several metrics with the same horizons.
    pub fn mean(items: &[HorizonMetrics]) -> Self {
        let n = items.first().map_or(0, |m| m.values.len());
        let values = (0..n)
            .map(|k| items.iter().map(|m| m.values[k]).sum::<f64>() / items.len() as f64)
            .collect();
        Self::from_values(values)
    }
}

fn check_len(len: usize, spec: &HorizonSpec) -> Result<(), EvalError> {
    if len < spec.max_index() {
        Err(EvalError::LengthMismatch {
            len,
            needed: spec.max_index(),
        })
    } else {
        Ok(())
    }
}

/// Euclidean waypoint distance at each horizon.
pub fn l2_error(pred: &[Waypoint], truth: &[Waypoint], spec: &HorizonSpec) -> Result<HorizonMetrics, EvalError> {
    check_len(pred.len(), spec)?;
    check_len(truth.len(), spec)?;
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            len: pred.len(),
            needed: truth.len(),
        });
    }
    Ok(HorizonMetrics::from_values(
        spec.indices.iter().map(|&i| pred[i - 1].dist(&truth[i - 1])).collect(),
    ))
}

/// Whether the waypoint at 1-based index `i` overlaps any agent at that time.
/// Touching discs (distance exactly `r_ego + r_agent`) do not collide.
pub fn collides_at(pred: &[Waypoint], scene: &Scene, i: usize, r_ego: f64) -> bool {
    let t = i as f64 * DT;
    let p = pred[i - 1];
    scene.agents.iter().any(|a| p.dist(&a.position_at(t)) < r_ego + a.radius)
}

/// Percentage of plans colliding at each horizon.
pub fn collision_rate(
    plans: &[(&[Waypoint], &Scene)],
    spec: &HorizonSpec,
    r_ego: f64,
) -> Result<HorizonMetrics, EvalError> {
    if plans.is_empty() {
        return Err(EvalError::EmptySet);
    }
    for (p, _) in plans {
        check_len(p.len(), spec)?;
    }
    let n = plans.len() as f64;
    Ok(HorizonMetrics::from_values(
        spec.indices
            .iter()
            .map(|&i| 100.0 * plans.iter().filter(|(p, s)| collides_at(p, s, i, r_ego)).count() as f64 / n)
            .collect(),
    ))
}

/// Largest step speed between consecutive waypoints.
pub fn max_speed(traj: &[Waypoint]) -> f64 {
    traj.windows(2).map(|w| w[0].dist(&w[1]) / DT).fold(0.0, f64::max)
}

/// Outlier suppression and smoothing of a decoded trajectory.
///
/// 1. Walking forward from the first waypoint, a waypoint that cannot be
///    reached from the last accepted one without exceeding [`V_MAX`] is an
///    outlier; outliers between accepted waypoints are replaced by linear
///    interpolation.
/// 2. Interior waypoints get a 3-point moving average; endpoints are kept.
/// 3. Any step still faster than `V_MAX` (only possible with trailing
///    outliers) is shortened along its direction.
///
/// Every stage is a convex combination of existing steps or a shortening,
/// so the maximum step speed never increases.
pub fn refine_trajectory(raw: &[Waypoint]) -> Result<Vec<Waypoint>, EvalError> {
    let n = raw.len();
    if n < 3 {
        return Err(EvalError::TooShort(n));
    }
    let mut p = raw.to_vec();
    let mut anchor = 0;
    let mut pending = false;
    for j in 1..n {
        let reach = V_MAX * DT * (j - anchor) as f64;
        if raw[anchor].dist(&raw[j]) > reach {
            pending = true;
            continue;
        }
        if pending {
            let (a, b) = (raw[anchor], raw[j]);
            let span = (j - anchor) as f64;
            for (k, q) in p.iter_mut().enumerate().take(j).skip(anchor + 1) {
                let t = (k - anchor) as f64 / span;
                *q = Waypoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
            }
            pending = false;
        }
        anchor = j;
    }

    let mut out = p.clone();
    for j in 1..n - 1 {
        out[j] = Waypoint::new((p[j - 1].x + p[j].x + p[j + 1].x) / 3.0, (p[j - 1].y + p[j].y + p[j + 1].y) / 3.0);
    }

    let step_max = V_MAX * DT;
    for j in 1..n {
        let d = out[j - 1].dist(&out[j]);
        if d > step_max {
            let f = step_max / d;
            let prev = out[j - 1];
            out[j] = Waypoint::new(prev.x + (out[j].x - prev.x) * f, prev.y + (out[j].y - prev.y) * f);
        }
    }
    Ok(out)
}
