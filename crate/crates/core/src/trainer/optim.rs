use super::{TrainConfig, TrainError};
use crate::model::{Grads, ParamStore};
use crate::numerics::Tensor2D;

/// `base_lr · (1 − step/total_steps)`.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64) -> Result<f64, TrainError> {
    if step > total_steps || total_steps == 0 {
        return Err(TrainError::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    Ok(base_lr * (1.0 - step as f64 / total_steps as f64))
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Tensor2D>,
    v: Vec<Tensor2D>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(params: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| Tensor2D::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Updates blocks flagged in `trainable`; a missing gradient counts as
    /// zero. Untrainable blocks are not touched at all.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, trainable: &[bool], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for id in 0..params.len() {
            if !trainable[id] {
                continue;
            }
            let g = grads.get(id);
            let (m, v) = (self.m[id].data_mut(), self.v[id].data_mut());
            let p = params.value_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                p[j] -= lr * (update + self.weight_decay * p[j]);
            }
        }
    }
}
