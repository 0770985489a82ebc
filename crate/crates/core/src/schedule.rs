//! Noise schedules and the training-time noise-level prior.
//!
//! Steps are 1-based: `alpha(t)` and `gamma(t)` for `t in 1..=T`, with the
//! convention `gamma(0) == 1`. Everything is stored in `f64` because the
//! cumulative product over thousands of steps drifts in `f32`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, RandomSource, Result};

/// Endpoints and length of a linear beta schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearScheduleParams {
    pub beta_start: f64,
    pub beta_end: f64,
    pub steps: usize,
}

impl LinearScheduleParams {
    /// Training schedule: 2000 steps, beta from 1e-6 to 0.01.
    pub const TRAINING: Self = Self {
        beta_start: 1e-6,
        beta_end: 0.01,
        steps: 2000,
    };

    /// Inference schedule: 1000 refinement steps, beta from 1e-4 to 0.09.
    pub const INFERENCE: Self = Self {
        beta_start: 1e-4,
        beta_end: 0.09,
        steps: 1000,
    };

    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.beta_start, self.beta_end, self.steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    gammas: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas linearly spaced from `beta_start` to `beta_end` inclusive.
    pub fn linear(beta_start: f64, beta_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSchedule("step count must be positive".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(alloc::format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas = if steps == 1 {
            alloc::vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            let last = (steps - 1) as f64;
            (0..steps)
                .map(|i| {
                    if i == steps - 1 {
                        beta_end
                    } else {
                        beta_start + span * (i as f64 / last)
                    }
                })
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Same contract as [`NoiseSchedule::linear`]; named separately because
    /// the refinement schedule used at sampling time differs from training.
    pub fn inference(beta_start: f64, beta_end: f64, steps: usize) -> Result<Self> {
        Self::linear(beta_start, beta_end, steps)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("empty beta sequence".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(alloc::format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut gammas = Vec::with_capacity(alphas.len());
        let mut acc = 1.0f64;
        for &a in &alphas {
            acc *= a;
            gammas.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            gammas,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative retention at step `t`; `gamma(0) == 1`.
    pub fn gamma(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.gammas[t - 1]
        }
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(alloc::format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Draws a continuous noise level: a segment `t` uniformly from `1..=T`,
    /// then `gamma` uniformly inside `(gamma_t, gamma_{t-1})`.
    pub fn sample_training_gamma(&self, rng: &mut RandomSource) -> f64 {
        let t = 1 + rng.below(self.steps());
        let (lo, hi) = (self.gamma(t), self.gamma(t - 1));
        lo + (hi - lo) * rng.uniform_open()
    }
}
