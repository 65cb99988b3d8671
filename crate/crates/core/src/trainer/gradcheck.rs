//! Finite-difference check of the whole training objective on the tiny config.

use serde::{Deserialize, Serialize};

use super::{batch_objective, BatchItem, Example, Objective, TrainError};
use crate::losses::{AlignConfig, DistillConfig, LossWeights};
use crate::model::{concat_views, tokenize_trajectory, Model, ModelConfig, PromptTokens, Waypoint};
use crate::numerics::{finite_diff_grad, relative_error, RngSeed, SplitMix64, Tensor2D};
use crate::raster::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

/// Relative-error floor, so near-zero gradients are compared absolutely.
const FLOOR: f64 = 1e-6;

fn noise_image(h: usize, w: usize, rng: &mut SplitMix64) -> RasterImage {
    let data = (0..h * w * 3).map(|_| rng.below(256) as u8).collect();
    RasterImage::new(h, w, 3, data).expect("sized buffer")
}

/// Random images, prompts and in-range trajectories for the tiny config.
pub fn tiny_examples(cfg: &ModelConfig, n: usize, seed: RngSeed) -> Vec<Example> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| {
            let image = concat_views(&noise_image(8, 8, &mut rng), &noise_image(8, 8, &mut rng)).expect("equal heights");
            let len = 2 + rng.below(cfg.max_prompt_len - 1);
            let prompt = PromptTokens {
                ids: (0..len).map(|_| rng.below(cfg.text_vocab)).collect(),
            };
            let traj: Vec<Waypoint> = (0..cfg.horizon)
                .map(|_| Waypoint::new(rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0)))
                .collect();
            Example {
                image,
                prompt,
                target: tokenize_trajectory(&traj, cfg).expect("in range"),
            }
        })
        .collect()
}

/// Compares the analytic gradient of the full objective (all three terms,
/// default weights) with central differences at `n_checks` random scalars.
pub fn objective_gradcheck(n_checks: usize, seed: RngSeed, tol: f64) -> Result<GradcheckReport, TrainError> {
    let cfg = ModelConfig::tiny(12);
    let model = Model::init(cfg, seed)?;
    let examples = tiny_examples(&cfg, 3, seed.derive(1));
    let mut rng = SplitMix64::new(seed.derive(2));
    let teacher: Vec<Tensor2D> = examples
        .iter()
        .map(|_| {
            let (r, c) = (cfg.positions(), cfg.vocab_coord());
            Tensor2D::from_vec(r, c, (0..r * c).map(|_| 2.0 * rng.normal()).collect()).expect("sized buffer")
        })
        .collect();
    let obj = Objective {
        weights: LossWeights::default(),
        distill: DistillConfig::default(),
        align: AlignConfig { kappa: 0.5 },
        freeze_vision: false,
    };
    let items: Vec<BatchItem> = examples
        .iter()
        .zip(&teacher)
        .map(|(e, t)| BatchItem {
            example: e,
            vision: None,
            teacher_logits: Some(t),
        })
        .collect();
    let (_, grads) = batch_objective(&model, &items, &obj)?;

    let mut report = GradcheckReport {
        checked: 0,
        max_rel_error: 0.0,
        failures: 0,
    };
    for _ in 0..n_checks {
        let pid = rng.below(model.params().len());
        let idx = rng.below(model.params().value(pid).data().len());
        let x0 = model.params().value(pid).data()[idx];
        let f = |x: &[f64]| {
            let mut m = model.clone();
            m.params_mut().value_mut(pid).data_mut()[idx] = x[0];
            batch_objective(&m, &items, &obj).map_or(f64::NAN, |(l, _)| l.total)
        };
        let num = finite_diff_grad(f, &[x0], 1e-5).map_err(crate::losses::LossError::from)?[0];
        let ana = grads.get(pid).map_or(0.0, |g| g.data()[idx]);
        let err = relative_error(ana, num, FLOOR);
        report.checked += 1;
        report.max_rel_error = report.max_rel_error.max(err);
        if err > tol {
            report.failures += 1;
        }
    }
    Ok(report)
}
