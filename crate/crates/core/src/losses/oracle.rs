//! Randomized agreement check between the analytic loss gradients and
//! central finite differences of the implemented losses.

use serde::{Deserialize, Serialize};

use super::{
    alignment_grad, alignment_loss, kd_grad, kd_loss, similarity_backward, similarity_matrix, AlignConfig,
    DistillConfig, LossError, SimilarityMatrix,
};
use crate::numerics::{finite_diff_grad, relative_error, softmax_temp, RngSeed, SplitMix64, Tensor2D};

pub const FD_STEP: f64 = 1e-5;
/// Magnitude below which relative error is measured against this floor.
pub const REL_FLOOR: f64 = 1e-4;

const KD_TEMPS: [f64; 3] = [1.0, 2.0, 4.0];
const KAPPAS: [f64; 2] = [0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub trials: usize,
    pub tol: f64,
    /// `∂L/∂S` against differences of the alignment loss in `S`.
    pub align_max_rel: f64,
    /// `∂L/∂z`, `∂L/∂h` through the normalized similarity.
    pub align_embed_max_rel: f64,
    pub kd_max_rel: f64,
    /// Largest deviation from `(σ − I)/K` built from an independent softmax.
    pub closed_form_max_abs: f64,
    pub failures: usize,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn noise(rng: &mut SplitMix64, rows: usize, cols: usize, std: f64) -> Tensor2D {
    let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
    Tensor2D::from_vec(rows, cols, data).expect("shape matches data")
}

fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| relative_error(*a, *b, REL_FLOOR))
        .fold(0.0, f64::max)
}

fn closed_form_gap(sim: &SimilarityMatrix) -> Result<f64, LossError> {
    let g = alignment_grad(sim);
    let k = sim.batch();
    let mut worst: f64 = 0.0;
    for i in 0..k {
        let sigma = softmax_temp(sim.scores().row(i), 1.0)?;
        for (j, s) in sigma.iter().enumerate() {
            let delta = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get(i, j) - (s - delta) / k as f64).abs());
        }
    }
    Ok(worst)
}

fn align_trial(rng: &mut SplitMix64) -> Result<(f64, f64, f64), LossError> {
    let k = 2 + rng.below(7);
    let d = 2 + rng.below(7);
    let cfg = AlignConfig {
        kappa: KAPPAS[rng.below(KAPPAS.len())],
    };
    let z = noise(rng, k, d, 1.0);
    let h = noise(rng, k, d, 1.0);
    let sim = similarity_matrix(&z, &h, cfg)?;

    let g = alignment_grad(&sim);
    let over_s = |x: &[f64]| {
        let s = Tensor2D::from_vec(k, k, x.to_vec()).expect("k×k");
        SimilarityMatrix::from_scores(s, cfg.kappa).map_or(f64::NAN, |m| alignment_loss(&m))
    };
    let num = finite_diff_grad(over_s, sim.scores().data(), FD_STEP)?;
    let rel_s = max_rel(g.data(), &num);

    let (gz, gh) = similarity_backward(&z, &h, &g, cfg.kappa)?;
    let loss_at = |z: &Tensor2D, h: &Tensor2D| similarity_matrix(z, h, cfg).map_or(f64::NAN, |m| alignment_loss(&m));
    let nz = finite_diff_grad(|x| loss_at(&Tensor2D::from_vec(k, d, x.to_vec()).expect("k×d"), &h), z.data(), FD_STEP)?;
    let nh = finite_diff_grad(|x| loss_at(&z, &Tensor2D::from_vec(k, d, x.to_vec()).expect("k×d")), h.data(), FD_STEP)?;
    let rel_e = max_rel(gz.data(), &nz).max(max_rel(gh.data(), &nh));
    Ok((rel_s, rel_e, closed_form_gap(&sim)?))
}

fn kd_trial(rng: &mut SplitMix64) -> Result<f64, LossError> {
    let n = 1 + rng.below(8);
    let c = 2 + rng.below(15);
    let cfg = DistillConfig {
        temp: KD_TEMPS[rng.below(KD_TEMPS.len())],
        ..Default::default()
    };
    let student = noise(rng, n, c, 2.0);
    let teacher = noise(rng, n, c, 2.0);
    let g = kd_grad(&student, &teacher, cfg)?;
    let f = |x: &[f64]| {
        let s = Tensor2D::from_vec(n, c, x.to_vec()).expect("n×c");
        kd_loss(&s, &teacher, cfg).unwrap_or(f64::NAN)
    };
    let num = finite_diff_grad(f, student.data(), FD_STEP)?;
    Ok(max_rel(g.data(), &num))
}

/// Runs `trials` alignment instances and `trials` distillation instances.
pub fn oracle_suite(trials: usize, seed: RngSeed, tol: f64) -> Result<OracleReport, LossError> {
    let mut rng = SplitMix64::new(seed);
    let mut report = OracleReport {
        trials,
        tol,
        align_max_rel: 0.0,
        align_embed_max_rel: 0.0,
        kd_max_rel: 0.0,
        closed_form_max_abs: 0.0,
        failures: 0,
    };
    for _ in 0..trials {
        let (s, e, cf) = align_trial(&mut rng)?;
        let kd = kd_trial(&mut rng)?;
        report.align_max_rel = report.align_max_rel.max(s);
        report.align_embed_max_rel = report.align_embed_max_rel.max(e);
        report.kd_max_rel = report.kd_max_rel.max(kd);
        report.closed_form_max_abs = report.closed_form_max_abs.max(cf);
        report.failures += usize::from(s > tol || e > tol || cf > 1e-15) + usize::from(kd > tol);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_default_tolerance() {
        let r = oracle_suite(100, RngSeed(0), 1e-5).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn impossible_tolerance_reports_failures() {
        let r = oracle_suite(5, RngSeed(1), 0.0).unwrap();
        assert!(!r.passed());
    }
}
