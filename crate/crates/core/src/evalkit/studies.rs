use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{collision_rate, l2_error, EvalError, HorizonMetrics, HorizonSpec, EGO_RADIUS};
use crate::losses::LossWeights;
use crate::model::{Model, ModelConfig, TextTokenizer, Waypoint};
use crate::numerics::RngSeed;
use crate::raster::RasterImage;
use crate::scenario::{constant_velocity, perturb_text, Sample, Scene};
use crate::trainer::{
    fit, init_student, mean_traj_loss, prepare_examples, teacher_logits, PrepareOptions, TrainConfig, TrainReport,
};
use crate::v2xlink::{bps, plan, sequential_infer, LinkConfig, RoadsideConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub scale: f64,
    /// Gaussian noise on the roadside view, intensity units.
    pub image_noise: f64,
    /// Per-word replacement probability in the prompt.
    pub text_p: f64,
    pub blank_infra: bool,
    pub task_only: bool,
    pub refine: bool,
    pub r_ego: f64,
    pub seed: RngSeed,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            scale: 1.0,
            image_noise: 0.0,
            text_p: 0.0,
            blank_infra: false,
            task_only: false,
            refine: true,
            r_ego: EGO_RADIUS,
            seed: RngSeed(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub l2: HorizonMetrics,
    pub collision: HorizonMetrics,
    /// Mean wall time per scene, milliseconds.
    pub latency_ms: f64,
}

fn summarize(
    plans: &[Vec<Waypoint>],
    samples: &[Sample],
    spec: &HorizonSpec,
    r_ego: f64,
    latency_ms: f64,
) -> Result<EvalSummary, EvalError> {
    if plans.is_empty() {
        return Err(EvalError::EmptySet);
    }
    let l2: Vec<HorizonMetrics> = plans
        .iter()
        .zip(samples)
        .map(|(p, s)| l2_error(p, &s.trajectory, spec))
        .collect::<Result<_, _>>()?;
    let pairs: Vec<(&[Waypoint], &Scene)> = plans.iter().zip(samples).map(|(p, s)| (p.as_slice(), &s.scene)).collect();
    Ok(EvalSummary {
        n: plans.len(),
        l2: HorizonMetrics::mean(&l2),
        collision: collision_rate(&pairs, spec, r_ego)?,
        latency_ms,
    })
}

/// Plans every scene through the link pipeline and scores it.
/// Scene `i` draws its perturbations from `opts.seed.derive(i)`.
pub fn evaluate(
    model: &Model,
    tokenizer: &TextTokenizer,
    samples: &[Sample],
    opts: &EvalOptions,
) -> Result<EvalSummary, EvalError> {
    let spec = HorizonSpec::default();
    let start = Instant::now();
    let mut plans = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let seed = opts.seed.derive(i as u64);
        let prompt = perturb_text(&s.prompt, opts.text_p, seed.derive(1));
        let text = if opts.task_only { prompt.task_only() } else { prompt.full_text() };
        let out = if opts.blank_infra {
            let black = RasterImage::filled(s.infra.height(), s.infra.width(), s.infra.channels(), 0);
            plan(model, tokenizer, &s.vehicle, &black, &text, opts.refine)
        } else {
            let road = RoadsideConfig {
                scale: opts.scale,
                noise_std: opts.image_noise,
                seed: seed.derive(2),
                ..Default::default()
            };
            sequential_infer(model, tokenizer, &s.vehicle, &s.infra, &text, &road, opts.refine)
        }
        .map_err(Box::new)?;
        plans.push(out.trajectory);
    }
    let latency = start.elapsed().as_secs_f64() * 1000.0 / samples.len().max(1) as f64;
    summarize(&plans, samples, &spec, opts.r_ego, latency)
}

/// Straight-line extrapolation of the ego state, scored like a model.
pub fn constant_velocity_baseline(samples: &[Sample], r_ego: f64) -> Result<EvalSummary, EvalError> {
    let spec = HorizonSpec::default();
    let plans: Vec<Vec<Waypoint>> = samples
        .iter()
        .map(|s| constant_velocity(&s.scene.ego, s.trajectory.len()))
        .collect();
    summarize(&plans, samples, &spec, r_ego, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale: f64,
    /// Bandwidth of a 1920×1080×3 stream at 2 Hz under this scale.
    pub bps: u64,
    pub summary: EvalSummary,
    pub fps: f64,
}

pub fn sweep_bandwidth(
    model: &Model,
    tokenizer: &TextTokenizer,
    samples: &[Sample],
    scales: &[f64],
    seed: RngSeed,
) -> Result<Vec<SweepRow>, EvalError> {
    let links: Vec<LinkConfig> = scales
        .iter()
        .map(|&s| LinkConfig::full_hd(s).map_err(|e| EvalError::Link(Box::new(e))))
        .collect::<Result<_, _>>()?;
    links
        .iter()
        .map(|link| {
            let opts = EvalOptions {
                scale: link.scale,
                seed,
                ..Default::default()
            };
            let summary = evaluate(model, tokenizer, samples, &opts)?;
            Ok(SweepRow {
                scale: link.scale,
                bps: bps(link),
                fps: 1000.0 / summary.latency_ms,
                summary,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub condition: String,
    pub options: EvalOptions,
    pub summary: EvalSummary,
}

/// Perturbation settings in table order, ending with the clean row.
pub fn robustness_conditions(seed: RngSeed) -> Vec<(String, EvalOptions)> {
    let base = EvalOptions {
        seed,
        ..Default::default()
    };
    vec![
        ("image noise (std 5)".into(), EvalOptions { image_noise: 5.0, ..base }),
        ("image noise (std 10)".into(), EvalOptions { image_noise: 10.0, ..base }),
        ("text perturbation (p 0.1)".into(), EvalOptions { text_p: 0.1, ..base }),
        (
            "combined (noise 10, p 0.1)".into(),
            EvalOptions {
                image_noise: 10.0,
                text_p: 0.1,
                ..base
            },
        ),
        ("no perturbation".into(), base),
    ]
}

pub fn robustness_suite(
    model: &Model,
    tokenizer: &TextTokenizer,
    samples: &[Sample],
    seed: RngSeed,
) -> Result<Vec<RobustnessRow>, EvalError> {
    robustness_conditions(seed)
        .into_iter()
        .map(|(condition, options)| {
            Ok(RobustnessRow {
                summary: evaluate(model, tokenizer, samples, &options)?,
                condition,
                options,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    NoFusion,
    NoDistillation,
    NoScenePrompting,
    NoFeatureAlignment,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::NoFusion,
        Variant::NoDistillation,
        Variant::NoScenePrompting,
        Variant::NoFeatureAlignment,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoFusion => "no fusion",
            Variant::NoDistillation => "w/o distillation",
            Variant::NoScenePrompting => "w/o scene prompting",
            Variant::NoFeatureAlignment => "w/o feature alignment",
            Variant::Full => "full",
        }
    }

    pub fn prepare(self) -> PrepareOptions {
        PrepareOptions {
            blank_infra: self == Variant::NoFusion,
            task_only_prompt: self == Variant::NoScenePrompting,
        }
    }

    pub fn weights(self, base: LossWeights) -> LossWeights {
        match self {
            Variant::NoDistillation => LossWeights { lambda2: 0.0, ..base },
            Variant::NoFeatureAlignment => LossWeights { lambda1: 0.0, ..base },
            _ => base,
        }
    }

    fn eval_options(self, seed: RngSeed) -> EvalOptions {
        EvalOptions {
            blank_infra: self == Variant::NoFusion,
            task_only: self == Variant::NoScenePrompting,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub summary: EvalSummary,
    /// Teacher-forced trajectory cross-entropy on the held-out scenes.
    pub held_out_traj: f64,
    pub bps: u64,
    pub report: TrainReport,
}

/// Shared inputs of the ablation runs.
#[derive(Debug, Clone, Copy)]
pub struct AblationSetup<'a> {
    pub train: &'a [Sample],
    pub held_out: &'a [Sample],
    pub teacher: &'a Model,
    pub student_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub tokenizer: &'a TextTokenizer,
}

/// Trains and scores one student variant. The teacher always sees the full
/// inputs; only the student's inputs and loss weights change.
pub fn run_variant(setup: &AblationSetup, variant: Variant, teacher_out: &[crate::numerics::Tensor2D]) -> Result<AblationRow, EvalError> {
    train_variant(setup, variant, teacher_out).map(|(_, row)| row)
}

/// [`run_variant`] that also hands back the trained student.
pub fn train_variant(
    setup: &AblationSetup,
    variant: Variant,
    teacher_out: &[crate::numerics::Tensor2D],
) -> Result<(Model, AblationRow), EvalError> {
    let cfg = TrainConfig {
        weights: variant.weights(setup.train_cfg.weights),
        ..setup.train_cfg
    };
    let train = prepare_examples(setup.train, setup.tokenizer, &setup.student_cfg, variant.prepare())?;
    let held = prepare_examples(setup.held_out, setup.tokenizer, &setup.student_cfg, variant.prepare())?;
    let mut student = init_student(setup.student_cfg, cfg.seed)?;
    let report = fit(&mut student, &train, Some(teacher_out), &cfg)?;
    let summary = evaluate(&student, setup.tokenizer, setup.held_out, &variant.eval_options(cfg.seed))?;
    let row = AblationRow {
        variant,
        held_out_traj: mean_traj_loss(&student, &held)?,
        bps: if variant == Variant::NoFusion {
            0
        } else {
            bps(&LinkConfig::full_hd(1.0).map_err(Box::new)?)
        },
        summary,
        report,
    };
    Ok((student, row))
}

/// Teacher logits on the full-input training examples.
pub fn ablation_teacher_logits(setup: &AblationSetup) -> Result<Vec<crate::numerics::Tensor2D>, EvalError> {
    let full = prepare_examples(setup.train, setup.tokenizer, &setup.student_cfg, PrepareOptions::default())?;
    Ok(teacher_logits(setup.teacher, &full)?)
}

pub fn ablation_suite(setup: &AblationSetup) -> Result<Vec<AblationRow>, EvalError> {
    let logits = ablation_teacher_logits(setup)?;
    Variant::ALL.iter().map(|&v| run_variant(setup, v, &logits)).collect()
}
