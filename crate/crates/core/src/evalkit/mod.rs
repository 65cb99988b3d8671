//! Trajectory metrics, refinement, latency accounting and the evaluation
//! studies built on them.

mod latency;
mod metrics;
mod studies;
mod table;

pub use latency::{fps, latency_breakdown, latency_stats, LatencyRecord, LatencyStats};
pub use metrics::{
    collides_at, collision_rate, l2_error, max_speed, refine_trajectory, HorizonMetrics, HorizonSpec, EGO_RADIUS, V_MAX,
};
pub use studies::{
    ablation_suite, ablation_teacher_logits, constant_velocity_baseline, evaluate, robustness_conditions,
    robustness_suite, run_variant, sweep_bandwidth, train_variant, AblationRow, AblationSetup, EvalOptions, EvalSummary,
    RobustnessRow, SweepRow, Variant,
};
pub use table::{ablation_table, robustness_table, sweep_table, Table};

use thiserror::Error;

use crate::model::ModelError;
use crate::trainer::TrainError;
use crate::v2xlink::LinkError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory has {len} waypoints, need {needed}")]
    LengthMismatch { len: usize, needed: usize },
    #[error("refinement needs at least 3 waypoints, got {0}")]
    TooShort(usize),
    #[error("invalid horizon indices {0:?}")]
    InvalidHorizon(Vec<usize>),
    #[error("nothing to evaluate")]
    EmptySet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Link(Box<LinkError>),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl From<Box<LinkError>> for EvalError {
    fn from(e: Box<LinkError>) -> Self {
        EvalError::Link(e)
    }
}

impl From<LinkError> for EvalError {
    fn from(e: LinkError) -> Self {
        EvalError::Link(Box::new(e))
    }
}
