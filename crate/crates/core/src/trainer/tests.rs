use super::*;
use crate::losses::KdGradScale;

fn tiny_cfg() -> ModelConfig {
    ModelConfig::tiny(12)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 3,
        lr: 3e-3,
        ..Default::default()
    }
}

#[test]
fn full_objective_gradient_matches_finite_differences() {
    let r = objective_gradcheck(50, RngSeed(0), 1e-4).unwrap();
    assert_eq!(r.checked, 50);
    assert_eq!(r.failures, 0, "max relative error {}", r.max_rel_error);
}

#[test]
fn squared_temperature_switch_scales_kd_gradient_only() {
    let cfg = tiny_cfg();
    let m = Model::init(cfg, RngSeed(1)).unwrap();
    let ex = tiny_examples(&cfg, 2, RngSeed(2));
    let t: Vec<Tensor2D> = ex.iter().map(|e| m.forward(&e.image, &e.prompt, &e.target).unwrap().logits.scaled(1.5)).collect();
    let items: Vec<BatchItem> = ex
        .iter()
        .zip(&t)
        .map(|(e, t)| BatchItem {
            example: e,
            vision: None,
            teacher_logits: Some(t),
        })
        .collect();
    let mut obj = Objective {
        weights: LossWeights { lambda1: 0.0, lambda2: 1.0 },
        distill: DistillConfig::default(),
        align: AlignConfig::default(),
        freeze_vision: false,
    };
    let (la, ga) = batch_objective(&m, &items, &obj).unwrap();
    obj.distill.grad_scale = KdGradScale::SquaredTemperature;
    let (lb, gb) = batch_objective(&m, &items, &obj).unwrap();
    assert_eq!(la, lb);
    assert!(ga.norm() != gb.norm());
}

#[test]
fn batches_cover_and_drop_singletons() {
    let b = epoch_batches(9, 4, RngSeed(3), 0);
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4]);
    let b = epoch_batches(10, 4, RngSeed(3), 0);
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    let mut all: Vec<usize> = b.concat();
    all.sort();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    assert_eq!(epoch_batches(10, 4, RngSeed(3), 1), epoch_batches(10, 4, RngSeed(3), 1));
    assert_ne!(epoch_batches(10, 4, RngSeed(3), 1), epoch_batches(10, 4, RngSeed(3), 2));
}

#[test]
fn training_is_deterministic_and_respects_freezing() {
    let cfg = tiny_cfg();
    let ex = tiny_examples(&cfg, 7, RngSeed(4));
    let teacher = Model::init(cfg, RngSeed(5)).unwrap();
    let teacher_hash = teacher.params().fingerprint();
    let init = init_student(cfg, RngSeed(0)).unwrap();
    let (a, ra) = train_student(&ex, &teacher, cfg, &quick(3)).unwrap();
    let (b, rb) = train_student(&ex, &teacher, cfg, &quick(3)).unwrap();
    assert_eq!(a.params().fingerprint(), b.params().fingerprint());
    assert_eq!(ra.totals(), rb.totals());
    assert_eq!(ra.epochs.len(), 3);
    assert!(ra.epochs.iter().all(|r| r.total.is_finite() && r.update_norm > 0.0));
    assert_eq!(a.params().fingerprint_prefix(VISION_PREFIX), init.params().fingerprint_prefix(VISION_PREFIX));
    assert_ne!(a.params().fingerprint(), init.params().fingerprint());
    assert_eq!(teacher.params().fingerprint(), teacher_hash);

    let unfrozen = TrainConfig {
        freeze_vision: false,
        ..quick(1)
    };
    let (c, _) = train_student(&ex, &teacher, cfg, &unfrozen).unwrap();
    assert_ne!(c.params().fingerprint_prefix(VISION_PREFIX), init.params().fingerprint_prefix(VISION_PREFIX));
}

#[test]
fn zero_weights_reduce_to_plain_cross_entropy() {
    let cfg = tiny_cfg();
    let ex = tiny_examples(&cfg, 6, RngSeed(6));
    let teacher = Model::init(cfg, RngSeed(7)).unwrap();
    let tc = TrainConfig {
        weights: LossWeights { lambda1: 0.0, lambda2: 0.0 },
        ..quick(2)
    };
    let (distilled, rd) = train_student(&ex, &teacher, cfg, &tc).unwrap();
    let mut plain = init_student(cfg, tc.seed).unwrap();
    let rp = fit(&mut plain, &ex, None, &tc).unwrap();
    let trace = |r: &TrainReport| r.epochs.iter().map(|e| (e.traj.to_bits(), e.total.to_bits())).collect::<Vec<_>>();
    assert_eq!(trace(&rd), trace(&rp));
    assert_eq!(distilled.params().fingerprint(), plain.params().fingerprint());
}

#[test]
fn distillation_lowers_held_out_kd() {
    let cfg = tiny_cfg();
    let train = tiny_examples(&cfg, 12, RngSeed(8));
    let held = tiny_examples(&cfg, 4, RngSeed(9));
    let teacher = Model::init(cfg, RngSeed(10)).unwrap();
    let held_t = teacher_logits(&teacher, &held).unwrap();
    let tc = TrainConfig {
        weights: LossWeights { lambda1: 0.1, lambda2: 2.0 },
        ..quick(4)
    };
    let before = mean_kd_loss(&init_student(cfg, tc.seed).unwrap(), &held, &held_t, tc.distill).unwrap();
    let (student, _) = train_student(&train, &teacher, cfg, &tc).unwrap();
    let after = mean_kd_loss(&student, &held, &held_t, tc.distill).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn rejects_bad_inputs() {
    let cfg = tiny_cfg();
    let teacher = Model::init(cfg, RngSeed(1)).unwrap();
    assert!(matches!(train_student(&[], &teacher, cfg, &quick(1)), Err(TrainError::EmptyDataset)));
    assert!(matches!(train_teacher(&[], cfg, &quick(1)), Err(TrainError::EmptyDataset)));
    let ex = tiny_examples(&cfg, 4, RngSeed(2));
    let other = ModelConfig { horizon: 3, ..cfg };
    assert!(matches!(train_student(&ex, &teacher, other, &quick(1)), Err(TrainError::VocabMismatch { .. })));
    assert!(matches!(
        train_student(&ex, &teacher, cfg, &TrainConfig { epochs: 0, ..quick(1) }),
        Err(TrainError::InvalidConfig(_))
    ));
}

#[test]
fn report_serializes_one_line_per_epoch() {
    let cfg = tiny_cfg();
    let ex = tiny_examples(&cfg, 4, RngSeed(3));
    let (_, r) = train_teacher(&ex, cfg, &quick(2)).unwrap();
    let text = r.to_json_lines();
    assert_eq!(text.lines().count(), 2);
    let back: EpochRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(back, r.epochs[0]);
}
