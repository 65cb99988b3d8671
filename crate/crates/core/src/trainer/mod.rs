//! Teacher pretraining and student distillation: batched forward/backward
//! over the tape, the weighted three-term objective, AdamW with global-norm
//! clipping, and a linear learning-rate decay.

mod config;
mod gradcheck;
mod optim;

pub use config::{TrainConfig, PARITY_LR};
pub use gradcheck::{objective_gradcheck, tiny_examples, GradcheckReport};
pub use optim::{lr_at, AdamW};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{
    alignment_grad, alignment_loss, kd_grad, kd_loss, similarity_backward, similarity_matrix, traj_grad, traj_loss,
    AlignConfig, DistillConfig, LossError, LossWeights,
};
use crate::model::{
    concat_views, tokenize_trajectory, CompositeImage, GraphMode, Grads, Model, ModelConfig, ModelError, PromptTokens,
    TextTokenizer, TrajectoryTokens, VisionInput, VISION_PREFIX,
};
use crate::model::tape::Tape;
use crate::numerics::{RngSeed, SplitMix64, Tensor2D};
use crate::raster::RasterImage;
use crate::scenario::Sample;

/// Stream used to derive student initialization from the training seed.
const STUDENT_INIT_STREAM: u64 = 0x5354_5544;
const TEACHER_INIT_STREAM: u64 = 0x5445_4143;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss or gradient at epoch {epoch}, step {step}")]
    DivergenceDetected { epoch: usize, step: usize },
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("teacher vocabulary/horizon {teacher:?} differs from student {student:?}")]
    VocabMismatch { teacher: (usize, usize), student: (usize, usize) },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Model-ready form of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub image: CompositeImage,
    pub prompt: PromptTokens,
    pub target: TrajectoryTokens,
}

/// Input variants used by the ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrepareOptions {
    /// Replace the infrastructure view with a black frame of the same size.
    pub blank_infra: bool,
    /// Feed only the planning instruction instead of the full scene prompt.
    pub task_only_prompt: bool,
}

pub fn prepare_example(
    sample: &Sample,
    tokenizer: &TextTokenizer,
    cfg: &ModelConfig,
    opts: PrepareOptions,
) -> Result<Example, ModelError> {
    let image = if opts.blank_infra {
        let i = &sample.infra;
        concat_views(&sample.vehicle, &RasterImage::filled(i.height(), i.width(), i.channels(), 0))?
    } else {
        concat_views(&sample.vehicle, &sample.infra)?
    };
    let text = if opts.task_only_prompt {
        sample.prompt.task_only()
    } else {
        sample.prompt.full_text()
    };
    Ok(Example {
        image,
        prompt: tokenizer.encode(&text, cfg.max_prompt_len)?,
        target: tokenize_trajectory(&sample.trajectory, cfg)?,
    })
}

pub fn prepare_examples(
    samples: &[Sample],
    tokenizer: &TextTokenizer,
    cfg: &ModelConfig,
    opts: PrepareOptions,
) -> Result<Vec<Example>, ModelError> {
    samples.iter().map(|s| prepare_example(s, tokenizer, cfg, opts)).collect()
}

/// One batch member with its optional caches.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub example: &'a Example,
    /// Frozen vision-encoder output for this example.
    pub vision: Option<&'a Tensor2D>,
    pub teacher_logits: Option<&'a Tensor2D>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub weights: LossWeights,
    pub distill: DistillConfig,
    pub align: AlignConfig,
    pub freeze_vision: bool,
}

impl Objective {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            weights: cfg.weights,
            distill: cfg.distill,
            align: cfg.align,
            freeze_vision: cfg.freeze_vision,
        }
    }
}

/// Batch means of each loss term. `kd` is 0 when no teacher logits are given.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchLosses {
    pub traj: f64,
    pub align: f64,
    pub kd: f64,
    pub total: f64,
}

/// Value and parameter gradient of `L_traj + λ₁·L_align + λ₂·L_KD` over a
/// batch. Trajectory and distillation terms are averaged over the batch; the
/// alignment term is the batch-level contrastive loss.
pub fn batch_objective(model: &Model, items: &[BatchItem], obj: &Objective) -> Result<(BatchLosses, Grads), TrainError> {
    let k = items.len();
    if k < 2 {
        return Err(LossError::BatchTooSmall(k).into());
    }
    let has_teacher = items.iter().all(|it| it.teacher_logits.is_some());
    if obj.weights.lambda2 > 0.0 && !has_teacher {
        return Err(TrainError::InvalidConfig("distillation weight set without teacher logits".into()));
    }
    let mode = GraphMode::Train {
        freeze_vision: obj.freeze_vision,
    };
    let mut graphs = Vec::with_capacity(k);
    for it in items {
        let mut tape = Tape::new();
        let vision = match it.vision {
            Some(t) if obj.freeze_vision => VisionInput::Tokens(t),
            _ => VisionInput::Image(&it.example.image),
        };
        let nodes = model.build_graph(&mut tape, mode, vision, &it.example.prompt, it.example.target.decoder_input())?;
        graphs.push((tape, nodes));
    }
    let d_prime = model.config().d_prime;
    let mut z = Tensor2D::zeros(k, d_prime);
    let mut h = Tensor2D::zeros(k, d_prime);
    for (i, (tape, nodes)) in graphs.iter().enumerate() {
        z.row_mut(i).copy_from_slice(tape.value(nodes.z).row(0));
        h.row_mut(i).copy_from_slice(tape.value(nodes.h).row(0));
    }
    let sim = similarity_matrix(&z, &h, obj.align)?;
    let align = alignment_loss(&sim);
    let (gz, gh) = if obj.weights.lambda1 > 0.0 {
        let (gz, gh) = similarity_backward(&z, &h, &alignment_grad(&sim), obj.align.kappa)?;
        (Some(gz.scaled(obj.weights.lambda1)), Some(gh.scaled(obj.weights.lambda1)))
    } else {
        (None, None)
    };

    let inv_k = 1.0 / k as f64;
    let n_params = model.params().len();
    let mut grads = Grads::zeros_like_count(n_params);
    let (mut traj, mut kd) = (0.0, 0.0);
    for (i, ((tape, nodes), it)) in graphs.iter().zip(items).enumerate() {
        let logits = tape.value(nodes.logits);
        let targets = it.example.target.targets();
        traj += traj_loss(logits, targets)?;
        let mut g_logits = traj_grad(logits, targets)?.scaled(inv_k);
        if let Some(t) = it.teacher_logits.filter(|_| has_teacher) {
            kd += kd_loss(logits, t, obj.distill)?;
            if obj.weights.lambda2 > 0.0 {
                g_logits.add_assign(&kd_grad(logits, t, obj.distill)?.scaled(obj.weights.lambda2 * inv_k));
            }
        }
        let gz_i = gz.as_ref().map(|g| Tensor2D::from_rows(&[g.row(i).to_vec()])).transpose().map_err(LossError::from)?;
        let gh_i = gh.as_ref().map(|g| Tensor2D::from_rows(&[g.row(i).to_vec()])).transpose().map_err(LossError::from)?;
        let mut seeds = vec![(nodes.logits, &g_logits)];
        if let (Some(a), Some(b)) = (&gz_i, &gh_i) {
            seeds.push((nodes.z, a));
            seeds.push((nodes.h, b));
        }
        grads.add(&tape.backward(&seeds, n_params));
    }
    let traj = traj * inv_k;
    let kd = kd * inv_k;
    let total = traj + obj.weights.lambda1 * align + obj.weights.lambda2 * kd;
    Ok((BatchLosses { traj, align, kd, total }, grads))
}

/// One record per epoch; losses are means over the epoch's batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub traj: f64,
    pub align: f64,
    pub kd: f64,
    pub total: f64,
    pub wall_secs: f64,
    /// ‖θ_end − θ_start‖₂ over trainable parameters.
    pub update_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// Line-delimited JSON, one record per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record serializes") + "\n")
            .collect()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.total).collect()
    }
}

/// Contiguous batches of a per-epoch shuffle keyed on `(seed, epoch)`.
/// A trailing batch with fewer than two members is dropped.
pub fn epoch_batches(n: usize, batch: usize, seed: RngSeed, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed.derive(epoch as u64)).shuffle(&mut order);
    order.chunks(batch).filter(|c| c.len() >= 2).map(|c| c.to_vec()).collect()
}

fn is_frozen(name: &str, freeze_vision: bool) -> bool {
    freeze_vision && name.starts_with(VISION_PREFIX)
}

/// Trains `model` in place. With `teacher_logits` present the KD term is
/// evaluated (and weighted by `λ₂`); without them it is absent.
pub fn fit(
    model: &mut Model,
    examples: &[Example],
    teacher_logits: Option<&[Tensor2D]>,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if examples.len() < 2 {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(t) = teacher_logits {
        if t.len() != examples.len() {
            return Err(TrainError::InvalidConfig("one teacher logit block per example required".into()));
        }
    }
    let obj = Objective::from_config(cfg);
    let vision_cache: Option<Vec<Tensor2D>> = if cfg.freeze_vision {
        Some(
            examples
                .iter()
                .map(|e| model.encode_image(&e.image).map(|(t, _)| t))
                .collect::<Result<_, _>>()?,
        )
    } else {
        None
    };
    let per_epoch = epoch_batches(examples.len(), cfg.batch, cfg.seed, 0).len();
    let total_steps = per_epoch * cfg.epochs;
    let trainable: Vec<bool> = model
        .params()
        .iter()
        .map(|(_, name, _)| !is_frozen(name, cfg.freeze_vision))
        .collect();
    let mut opt = AdamW::new(model.params(), cfg);
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let before: Vec<Tensor2D> = model.params().iter().map(|(_, _, v)| v.clone()).collect();
        let mut sums = BatchLosses::default();
        let batches = epoch_batches(examples.len(), cfg.batch, cfg.seed, epoch);
        for batch in &batches {
            let items: Vec<BatchItem> = batch
                .iter()
                .map(|&i| BatchItem {
                    example: &examples[i],
                    vision: vision_cache.as_ref().map(|c| &c[i]),
                    teacher_logits: teacher_logits.map(|t| &t[i]),
                })
                .collect();
            let (losses, mut grads) = batch_objective(model, &items, &obj)?;
            if !losses.total.is_finite() || !grads.is_finite() {
                return Err(TrainError::DivergenceDetected { epoch, step });
            }
            let norm = grads.norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            let lr = lr_at(step, total_steps, cfg.lr)?;
            opt.step(model.params_mut(), &grads, &trainable, lr);
            sums.traj += losses.traj;
            sums.align += losses.align;
            sums.kd += losses.kd;
            sums.total += losses.total;
            step += 1;
        }
        let nb = batches.len() as f64;
        let update_norm = model
            .params()
            .iter()
            .zip(&before)
            .map(|((_, _, now), old)| now.data().iter().zip(old.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        report.epochs.push(EpochRecord {
            epoch,
            traj: sums.traj / nb,
            align: sums.align / nb,
            kd: sums.kd / nb,
            total: sums.total / nb,
            wall_secs: start.elapsed().as_secs_f64(),
            update_norm,
        });
    }
    Ok(report)
}

/// Trains a freshly initialized teacher on `L_traj + λ₁·L_align` with every
/// block trainable.
pub fn train_teacher(
    examples: &[Example],
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport), TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = Model::init(model_cfg, cfg.seed.derive(TEACHER_INIT_STREAM))?;
    let cfg = TrainConfig {
        freeze_vision: false,
        weights: LossWeights {
            lambda2: 0.0,
            ..cfg.weights
        },
        ..*cfg
    };
    let report = fit(&mut model, examples, None, &cfg)?;
    Ok((model, report))
}

/// Teacher-forced logits of a frozen teacher, one block per example.
pub fn teacher_logits(teacher: &Model, examples: &[Example]) -> Result<Vec<Tensor2D>, TrainError> {
    examples
        .iter()
        .map(|e| Ok(teacher.forward(&e.image, &e.prompt, &e.target)?.logits))
        .collect()
}

/// Initial student weights for a training seed.
pub fn init_student(model_cfg: ModelConfig, seed: RngSeed) -> Result<Model, TrainError> {
    Ok(Model::init(model_cfg, seed.derive(STUDENT_INIT_STREAM))?)
}

/// Initializes a student and distills `teacher` into it with the full objective.
pub fn train_student(
    examples: &[Example],
    teacher: &Model,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport), TrainError> {
    let t = teacher.config();
    if t.vocab_coord() != model_cfg.vocab_coord() || t.horizon != model_cfg.horizon {
        return Err(TrainError::VocabMismatch {
            teacher: (t.vocab_coord(), t.horizon),
            student: (model_cfg.vocab_coord(), model_cfg.horizon),
        });
    }
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let logits = teacher_logits(teacher, examples)?;
    let mut student = init_student(model_cfg, cfg.seed)?;
    let report = fit(&mut student, examples, Some(&logits), cfg)?;
    Ok((student, report))
}

/// Mean teacher-forced trajectory cross-entropy.
pub fn mean_traj_loss(model: &Model, examples: &[Example]) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut total = 0.0;
    for e in examples {
        let out = model.forward(&e.image, &e.prompt, &e.target)?;
        total += traj_loss(&out.logits, e.target.targets())?;
    }
    Ok(total / examples.len() as f64)
}

/// Mean distillation loss of `student` against cached teacher logits.
pub fn mean_kd_loss(
    student: &Model,
    examples: &[Example],
    teacher_logits: &[Tensor2D],
    distill: DistillConfig,
) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut total = 0.0;
    for (e, t) in examples.iter().zip(teacher_logits) {
        let out = student.forward(&e.image, &e.prompt, &e.target)?;
        total += kd_loss(&out.logits, t, distill)?;
    }
    Ok(total / examples.len() as f64)
}

#[cfg(test)]
mod tests;
