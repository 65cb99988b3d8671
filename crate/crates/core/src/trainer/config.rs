//! Training configuration and its text file format: one `key = value` per
//! line, `#` starts a comment, unknown keys are rejected.
//!
//! ```text
//! epochs = 10
//! batch = 4
//! lr = 1e-3
//! lambda1 = 0.1
//! lambda2 = 0.5
//! kd_temp = 2.0
//! kd_grad = chain-rule        # or squared-temperature
//! kappa = 1.0
//! seed = 0
//! freeze_vision = true
//! weight_decay = 0.01
//! clip_norm = 1.0
//! ```

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::losses::{AlignConfig, DistillConfig, KdGradScale, LossWeights};
use crate::numerics::RngSeed;

/// Learning rate used for pretrained backbones; available through `lr`.
pub const PARITY_LR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub distill: DistillConfig,
    pub align: AlignConfig,
    pub seed: RngSeed,
    pub freeze_vision: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 4,
            lr: 1e-3,
            weights: LossWeights::default(),
            distill: DistillConfig::default(),
            align: AlignConfig::default(),
            seed: RngSeed(0),
            freeze_vision: true,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch < 2 {
            return bad("batch must be at least 2");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        let w = self.weights;
        if !(w.lambda1.is_finite() && w.lambda1 >= 0.0 && w.lambda2.is_finite() && w.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be finite and non-negative");
        }
        if !(self.distill.temp > 0.0 && self.align.kappa > 0.0) {
            return bad("temperatures must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.clip_norm <= 0.0 {
            return bad("weight_decay must be >= 0 and clip_norm > 0");
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(mut self, text: &str) -> Result<Self, TrainError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| TrainError::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        match key {
            "epochs" => self.epochs = num(value)?,
            "batch" => self.batch = num(value)?,
            "lr" => self.lr = num(value)?,
            "lambda1" => self.weights.lambda1 = num(value)?,
            "lambda2" => self.weights.lambda2 = num(value)?,
            "kd_temp" => self.distill.temp = num(value)?,
            "kd_normalize" => self.distill.normalize_positions = num(value)?,
            "kd_grad" => {
                self.distill.grad_scale = match value {
                    "chain-rule" => KdGradScale::ChainRule,
                    "squared-temperature" => KdGradScale::SquaredTemperature,
                    other => return Err(format!("unknown kd_grad {other:?}")),
                }
            }
            "kappa" => self.align.kappa = num(value)?,
            "seed" => self.seed = RngSeed(num(value)?),
            "freeze_vision" => self.freeze_vision = num(value)?,
            "beta1" => self.beta1 = num(value)?,
            "beta2" => self.beta2 = num(value)?,
            "adam_eps" => self.adam_eps = num(value)?,
            "weight_decay" => self.weight_decay = num(value)?,
            "clip_norm" => self.clip_norm = num(value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let kd = match self.distill.grad_scale {
            KdGradScale::ChainRule => "chain-rule",
            KdGradScale::SquaredTemperature => "squared-temperature",
        };
        format!(
            "epochs = {}\nbatch = {}\nlr = {:e}\nlambda1 = {}\nlambda2 = {}\nkd_temp = {}\nkd_normalize = {}\nkd_grad = {kd}\nkappa = {}\nseed = {}\nfreeze_vision = {}\nbeta1 = {}\nbeta2 = {}\nadam_eps = {:e}\nweight_decay = {}\nclip_norm = {}\n",
            self.epochs,
            self.batch,
            self.lr,
            self.weights.lambda1,
            self.weights.lambda2,
            self.distill.temp,
            self.distill.normalize_positions,
            self.align.kappa,
            self.seed.0,
            self.freeze_vision,
            self.beta1,
            self.beta2,
            self.adam_eps,
            self.weight_decay,
            self.clip_norm,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig { lr: PARITY_LR, ..Default::default() };
        c.distill.grad_scale = KdGradScale::SquaredTemperature;
        let back = TrainConfig::default().apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        let base = TrainConfig::default();
        assert!(base.apply_text("epochs = 0").is_err());
        assert!(base.apply_text("batch = 1").is_err());
        assert!(base.apply_text("colour = red").is_err());
        assert!(base.apply_text("just words").is_err());
        let c = base.apply_text("# comment\nlambda2 = 0   # no distillation\n").unwrap();
        assert_eq!(c.weights.lambda2, 0.0);
    }
}
