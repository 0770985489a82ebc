//! Adam with linear warmup, and parameter averaging.

use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamStore};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps over which the rate ramps linearly from 0 to `learning_rate`.
    pub warmup_steps: u64,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub clip_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 10_000,
            clip_grad_norm: None,
        }
    }
}

impl AdamConfig {
    /// Learning rate applied on update number `step` (1-based).
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * (step as f64 / self.warmup_steps as f64).min(1.0)
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| alloc::vec![T::zero(); p.data.len()]).collect();
        Self { step: 0, m: zeros(), v: zeros() }
    }

    pub fn matches(&self, params: &ParamStore<T>) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params.iter().zip(&self.m).zip(&self.v).all(|((p, m), v)| p.data.len() == m.len() && p.data.len() == v.len())
    }

    /// Applies one update and returns the learning rate used.
    pub fn update(&mut self, config: &AdamConfig, params: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<f64> {
        if !self.matches(params) {
            return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let lr = config.learning_rate_at(self.step);
        let clip = match config.clip_grad_norm {
            Some(maxn) => {
                let n = grads.global_norm();
                if n > maxn {
                    maxn / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let t = self.step as i32;
        let bc1 = 1.0 - config.beta1.powi(t);
        let bc2 = 1.0 - config.beta2.powi(t);
        let (b1, b2) = (T::lit(config.beta1), T::lit(config.beta2));
        let (ob1, ob2) = (T::lit(1.0 - config.beta1), T::lit(1.0 - config.beta2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(config.eps);
        let clip = T::lit(clip);
        for (i, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            let Some(g) = g else {
                // Unused parameters still see their moments decay.
                for (m, v) in self.m[i].iter_mut().zip(self.v[i].iter_mut()) {
                    *m = b1 * *m;
                    *v = b2 * *v;
                }
                continue;
            };
            let (ms, vs) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = g[j] * clip;
                ms[j] = b1 * ms[j] + ob1 * gj;
                vs[j] = b2 * vs[j] + ob2 * gj * gj;
                let denom = Float::sqrt(vs[j] * inv_bc2) + eps;
                p.data[j] -= step_size * ms[j] / denom;
            }
        }
        Ok(lr)
    }
}

/// `avg <- decay * avg + (1 - decay) * params`.
pub fn ema_update<T: Real>(avg: &mut ParamStore<T>, params: &ParamStore<T>, decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::InvalidConfig(alloc::format!("EMA decay {decay} outside [0, 1)")));
    }
    if !avg.same_layout(params) {
        return Err(Error::InvalidArgument("EMA and parameter layouts differ".into()));
    }
    let (d, od) = (T::lit(decay), T::lit(1.0 - decay));
    for (a, p) in avg.iter_mut().zip(params.iter()) {
        for (x, &y) in a.data.iter_mut().zip(&p.data) {
            *x = d * *x + od * y;
        }
    }
    Ok(())
}
