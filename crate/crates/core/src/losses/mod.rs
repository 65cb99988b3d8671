//! Training objectives: trajectory-token cross-entropy, image–text alignment,
//! temperature-scaled distillation, and their weighted sum. Every loss with an
//! analytic gradient is checked against [`crate::numerics::finite_diff_grad`].

mod align;
mod distill;
mod oracle;

pub use align::{alignment_grad, alignment_loss, similarity_backward, similarity_matrix, AlignConfig, SimilarityMatrix};
pub use distill::{kd_grad, kd_loss, DistillConfig, KdGradScale};
pub use oracle::{oracle_suite, OracleReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{log_softmax_temp, softmax_temp, NumericsError, Tensor2D};

/// Per-position vocabulary logits, `N × C`.
pub type LogitBatch = Tensor2D;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("contrastive batch needs at least 2 pairs, got {0}")]
    BatchTooSmall(usize),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("target id {id} at position {position} is outside a vocabulary of {classes}")]
    TargetOutOfVocab { position: usize, id: usize, classes: usize },
    #[error("{targets} targets for {positions} logit rows")]
    LengthMismatch { targets: usize, positions: usize },
    #[error("loss term {0} is not finite")]
    NonFiniteTerm(&'static str),
}

pub(crate) fn check_same_shape(a: &Tensor2D, b: &Tensor2D) -> Result<(), LossError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(LossError::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        })
    }
}

fn check_targets(logits: &LogitBatch, targets: &[usize]) -> Result<(), LossError> {
    if targets.len() != logits.rows() {
        return Err(LossError::LengthMismatch {
            targets: targets.len(),
            positions: logits.rows(),
        });
    }
    if let Some((position, &id)) = targets.iter().enumerate().find(|(_, &id)| id >= logits.cols()) {
        return Err(LossError::TargetOutOfVocab {
            position,
            id,
            classes: logits.cols(),
        });
    }
    Ok(())
}

/// Mean next-token cross-entropy over positions.
pub fn traj_loss(logits: &LogitBatch, targets: &[usize]) -> Result<f64, LossError> {
    check_targets(logits, targets)?;
    let mut total = 0.0;
    for (n, &y) in targets.iter().enumerate() {
        total -= log_softmax_temp(logits.row(n), 1.0)?[y];
    }
    Ok(total / targets.len() as f64)
}

/// `∂ traj_loss / ∂ logits = (softmax − onehot) / N`.
pub fn traj_grad(logits: &LogitBatch, targets: &[usize]) -> Result<Tensor2D, LossError> {
    check_targets(logits, targets)?;
    let inv_n = 1.0 / targets.len() as f64;
    let mut g = Tensor2D::zeros(logits.rows(), logits.cols());
    for (n, &y) in targets.iter().enumerate() {
        let p = softmax_temp(logits.row(n), 1.0)?;
        let row = g.row_mut(n);
        for (o, pk) in row.iter_mut().zip(&p) {
            *o = pk * inv_n;
        }
        row[y] -= inv_n;
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the alignment term.
    pub lambda1: f64,
    /// Weight of the distillation term.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.5,
        }
    }
}

/// `L_traj + λ₁·L_align + λ₂·L_KD`.
pub fn total_loss(traj: f64, align: f64, kd: f64, w: LossWeights) -> Result<f64, LossError> {
    for (name, v) in [("traj", traj), ("align", align), ("kd", kd)] {
        if !v.is_finite() {
            return Err(LossError::NonFiniteTerm(name));
        }
    }
    Ok(traj + w.lambda1 * align + w.lambda2 * kd)
}
