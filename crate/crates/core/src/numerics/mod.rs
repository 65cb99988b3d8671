//! Deterministic dense arithmetic, normalization and softmax kernels, and the
//! central-difference gradient oracle used to check every analytic gradient.

mod rng;
mod tensor;

pub use rng::{RngSeed, SplitMix64};
pub use tensor::Tensor2D;

use thiserror::Error;

/// Norms at or below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("vector norm is zero or below {NORM_EPS}")]
    ZeroNorm,
    #[error("temperature must be positive and finite, got {0}")]
    NonPositiveTemperature(f64),
    #[error("empty sequence")]
    EmptySequence,
    #[error("expected {expected:?} elements, found {found}")]
    ShapeMismatch { expected: (usize, usize), found: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("function evaluation was not finite at coordinate {0}")]
    NonFiniteEvaluation(usize),
    #[error("finite-difference step {0} outside [1e-6, 1e-3]")]
    BadStep(f64),
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x).sqrt()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::EmptySequence);
    }
    let n = l2_norm(v);
    if !(n > NORM_EPS) {
        return Err(NumericsError::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn check_temp(temp: f64) -> Result<(), NumericsError> {
    if temp > 0.0 && temp.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::NonPositiveTemperature(temp))
    }
}

/// Log-sum-exp of `logits / temp` with max subtraction.
fn scaled_lse(logits: &[f64], temp: f64) -> (f64, f64) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)) / temp;
    let sum = logits.iter().fold(0.0, |acc, &x| acc + (x / temp - max).exp());
    (max, sum.ln())
}

/// `softmax(logits / temp)`.
pub fn softmax_temp(logits: &[f64], temp: f64) -> Result<Vec<f64>, NumericsError> {
    check_temp(temp)?;
    if logits.is_empty() {
        return Err(NumericsError::EmptySequence);
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)) / temp;
    let exps: Vec<f64> = logits.iter().map(|&x| (x / temp - max).exp()).collect();
    let sum = exps.iter().fold(0.0, |a, b| a + b);
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `log_softmax(logits / temp)`.
pub fn log_softmax_temp(logits: &[f64], temp: f64) -> Result<Vec<f64>, NumericsError> {
    check_temp(temp)?;
    if logits.is_empty() {
        return Err(NumericsError::EmptySequence);
    }
    let (max, log_sum) = scaled_lse(logits, temp);
    Ok(logits.iter().map(|&x| x / temp - max - log_sum).collect())
}

/// Column means over the token axis.
pub fn mean_pool(tokens: &Tensor2D) -> Result<Vec<f64>, NumericsError> {
    if tokens.rows() == 0 {
        return Err(NumericsError::EmptySequence);
    }
    let mut out = vec![0.0; tokens.cols()];
    for r in 0..tokens.rows() {
        for (o, v) in out.iter_mut().zip(tokens.row(r)) {
            *o += v;
        }
    }
    let n = tokens.rows() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

/// Central differences `(f(x + εeᵢ) − f(x − εeᵢ)) / 2ε` for every coordinate.
pub fn finite_diff_grad<F>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>, NumericsError>
where
    F: Fn(&[f64]) -> f64,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(NumericsError::BadStep(eps));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::NonFiniteEvaluation(i));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// `|a − b| / max(|a|, |b|, floor)`. The floor keeps near-zero pairs from
/// producing huge ratios out of rounding noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
