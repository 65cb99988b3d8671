use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{refine_trajectory, EvalError};
use crate::model::{concat_views, detokenize_trajectory, Model, TextTokenizer};
use crate::scenario::Sample;

/// Per-phase wall time of one batch, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    /// Tokenization and view fusion.
    pub preprocessing_ms: f64,
    /// Model decoding.
    pub inference_ms: f64,
    /// Detokenization and refinement.
    pub postprocessing_ms: f64,
    pub residual_ms: f64,
    pub total_ms: f64,
    pub batch: usize,
}

impl LatencyRecord {
    pub fn from_phases(pre: f64, infer: f64, post: f64, residual: f64, batch: usize) -> Self {
        Self {
            preprocessing_ms: pre,
            inference_ms: infer,
            postprocessing_ms: post,
            residual_ms: residual,
            total_ms: pre + infer + post + residual,
            batch,
        }
    }

    /// Share of each phase in percent, in field order.
    pub fn proportions(&self) -> [f64; 4] {
        let parts = [self.preprocessing_ms, self.inference_ms, self.postprocessing_ms, self.residual_ms];
        let sum: f64 = parts.iter().sum();
        if sum <= 0.0 {
            return [0.0; 4];
        }
        parts.map(|p| 100.0 * p / sum)
    }
}

/// Frames per second: batch size over total seconds.
pub fn fps(record: &LatencyRecord) -> f64 {
    record.batch as f64 / (record.total_ms / 1000.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: LatencyRecord,
    /// Sample standard deviation of the total over runs.
    pub total_std_ms: f64,
    pub runs: usize,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

/// Times one batch through fusion, tokenization, decoding and refinement.
pub fn latency_breakdown(model: &Model, tokenizer: &TextTokenizer, batch: &[Sample]) -> Result<LatencyRecord, EvalError> {
    if batch.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let start = Instant::now();
    let t = Instant::now();
    let mut inputs = Vec::with_capacity(batch.len());
    for s in batch {
        let image = concat_views(&s.vehicle, &s.infra)?;
        let prompt = tokenizer.encode(&s.prompt.full_text(), model.config().max_prompt_len)?;
        inputs.push((image, prompt));
    }
    let pre = ms(t);
    let t = Instant::now();
    let mut tokens = Vec::with_capacity(batch.len());
    for (image, prompt) in &inputs {
        tokens.push(model.greedy_decode(image, prompt)?);
    }
    let infer = ms(t);
    let t = Instant::now();
    for tok in &tokens {
        refine_trajectory(&detokenize_trajectory(tok, model.config())?)?;
    }
    let post = ms(t);
    let total = ms(start);
    Ok(LatencyRecord::from_phases(pre, infer, post, (total - pre - infer - post).max(0.0), batch.len()))
}

/// Repeats [`latency_breakdown`] and reports the mean record and spread.
pub fn latency_stats(model: &Model, tokenizer: &TextTokenizer, batch: &[Sample], runs: usize) -> Result<LatencyStats, EvalError> {
    if runs == 0 {
        return Err(EvalError::EmptySet);
    }
    let recs: Vec<LatencyRecord> = (0..runs)
        .map(|_| latency_breakdown(model, tokenizer, batch))
        .collect::<Result<_, _>>()?;
    let n = runs as f64;
    let avg = |f: fn(&LatencyRecord) -> f64| recs.iter().map(f).sum::<f64>() / n;
    let mean = LatencyRecord::from_phases(
        avg(|r| r.preprocessing_ms),
        avg(|r| r.inference_ms),
        avg(|r| r.postprocessing_ms),
        avg(|r| r.residual_ms),
        batch.len(),
    );
    let var = if runs > 1 {
        recs.iter().map(|r| (r.total_ms - mean.total_ms).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(LatencyStats {
        mean,
        total_std_ms: var.sqrt(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_breakdown_proportions() {
        let r = LatencyRecord::from_phases(269.01, 72.72, 9.02, 2.61, 4);
        assert!((r.total_ms - 353.36).abs() < 1e-9);
        let p = r.proportions();
        for (got, want) in p.iter().zip([76.1, 20.6, 2.6, 0.7]) {
            assert!((got - want).abs() < 0.05, "{got} vs {want}");
        }
        assert!((p.iter().sum::<f64>() - 100.0).abs() < 0.1);
    }

    #[test]
    fn fps_examples() {
        let at = |ms: f64, b: usize| fps(&LatencyRecord::from_phases(0.0, ms, 0.0, 0.0, b));
        assert!((at(353.36, 4) - 11.32).abs() < 0.01);
        assert!((at(263.97, 4) - 15.15).abs() < 0.01);
        assert_eq!(at(1000.0, 1), 1.0);
    }

    #[test]
    fn stub_phases_concentrate_share() {
        let r = LatencyRecord::from_phases(0.0, 50.0, 0.0, 0.0, 1);
        assert_eq!(r.proportions(), [0.0, 100.0, 0.0, 0.0]);
    }
}
