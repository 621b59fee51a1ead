use serde::{Deserialize, Serialize};

use super::loss::PairGradients;
use super::ProjectionPair;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Cosine decay from `lr0` to `lr_floor` over `total_steps`:
/// `lr(t) = floor + ½ (lr0 − floor)(1 + cos(π t / T))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr0: f64,
    pub lr_floor: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.lr0;
        }
        let t = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr_floor + 0.5 * (self.lr0 - self.lr_floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// AdamW with decoupled weight decay over the twelve tensors of a projection pair.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub schedule: CosineSchedule,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(pair: &ProjectionPair, schedule: CosineSchedule, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = pair.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self {
            schedule,
            weight_decay,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Learning rate the next call to [`AdamW::step`] will use.
    pub fn next_lr(&self) -> f64 {
        self.schedule.lr(self.step_count + 1)
    }

    /// Applies one update and returns the learning rate used.
    pub fn step(&mut self, pair: &mut ProjectionPair, grads: &PairGradients) -> f64 {
        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = self.schedule.lr(self.step_count);
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((param, grad), m), v) in
            pair.tensors_mut().zip(grads.tensors()).zip(&mut self.first_moment).zip(&mut self.second_moment)
        {
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                param[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * param[i]);
            }
        }
        lr
    }
}

/// Rescales all gradients jointly so their global L2 norm is at most
/// `max_norm`; `max_norm <= 0` disables clipping. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut PairGradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 {
        let coef = max_norm / (norm + 1e-6);
        if coef < 1.0 {
            for t in grads.tensors_mut() {
                for g in t.iter_mut() {
                    *g *= coef;
                }
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = CosineSchedule { lr0: 5e-5, lr_floor: 1e-6, total_steps: 1000 };
        assert_eq!(s.lr(0), 5e-5);
        assert!((s.lr(1000) - 1e-6).abs() < 1e-12);
        assert!((s.lr(500) - (1e-6 + 0.5 * (5e-5 - 1e-6))).abs() < 1e-18);
        for t in 0..1000 {
            assert!(s.lr(t + 1) <= s.lr(t));
        }
    }
}
