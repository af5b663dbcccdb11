//! AdamW with decoupled weight decay, global-norm clipping and the
//! warmup-then-cosine learning-rate schedule.

use crate::backbone::layers::{Module, Param};
use crate::real::Real;

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay
/// to 0 at `total`.
pub fn learning_rate(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Decay applies to weight matrices only; biases, norms and embeddings
/// stored as vectors are exempt.
pub fn decays(p: &Param<impl Real>) -> bool {
    p.shape.len() >= 2
}

pub fn grad_norm<T: Real, M: Module<T> + ?Sized>(module: &M) -> f64 {
    let mut sq = 0.0;
    module.visit(&mut |p| sq += p.grad.iter().map(|g| g.as_f64().powi(2)).sum::<f64>());
    sq.sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<T: Real, M: Module<T> + ?Sized>(module: &M, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let mut m = Vec::new();
        module.visit(&mut |p| m.push(vec![0.0; p.len()]));
        Self { beta1, beta2, eps, weight_decay, step: 0, v: m.clone(), m }
    }

    /// One update with gradients multiplied by `grad_scale`.
    pub fn update<T: Real, M: Module<T> + ?Sized>(&mut self, module: &mut M, lr: f64, grad_scale: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.eps, self.weight_decay);
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.visit_mut(&mut |p| {
            let decay = if decays(p) { 1.0 - lr * wd } else { 1.0 };
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            for i in 0..p.value.len() {
                let g = p.grad[i].as_f64() * grad_scale;
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let upd = (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                p.value[i] = T::lit(p.value[i].as_f64() * decay - lr * upd);
            }
            idx += 1;
        });
    }
}

/// Outcome of the clip-or-skip guard on a raw gradient norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClipDecision {
    Apply { scale: f64 },
    Skip,
}

pub fn clip_decision(norm: f64, clip: f64, skip_above: f64) -> ClipDecision {
    if !norm.is_finite() || norm > skip_above {
        ClipDecision::Skip
    } else if norm > clip {
        ClipDecision::Apply { scale: clip / norm }
    } else {
        ClipDecision::Apply { scale: 1.0 }
    }
}
