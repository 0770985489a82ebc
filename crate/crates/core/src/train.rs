//! The training step: noise-level sampling, masked `L_p` noise regression,
//! Adam with warmup, and parameter averaging.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{LossNorm, ParamStore, Tape};
use crate::denoiser::{ModelView, UNet};
use crate::diffusion::{broadcast_channels, forward_marginal_batch};
use crate::optim::{ema_update, AdamConfig, AdamState};
use crate::rng::RngState;
use crate::schedule::LinearScheduleParams;
use crate::tasks::{CorruptionBatch, Corruptor, Task};
use crate::toy::ImageSampler;
use crate::{Error, ImageTensor, NoiseSchedule, RandomSource, Real, Result};

/// What the network is trained to output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Predict the injected noise from a noisy target.
    Diffusion,
    /// Predict the clean target directly from the conditioning image; the
    /// noisy-target input is held at zero and the noise level at 1.
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub ema_decay: f64,
    /// Exponent of the loss norm, 1 or 2.
    pub loss_p: u32,
    pub tasks: Vec<Task>,
    pub schedule: LinearScheduleParams,
    pub seed: u64,
    pub objective: Objective,
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            total_steps: 20_000,
            learning_rate: 1e-4,
            warmup_steps: 10_000,
            ema_decay: 0.9999,
            loss_p: 2,
            tasks: alloc::vec![Task::Colorization],
            schedule: LinearScheduleParams::TRAINING,
            seed: 0,
            objective: Objective::Diffusion,
            clip_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 || self.total_steps == 0 {
            return fail("batch_size and total_steps must be positive");
        }
        if self.warmup_steps > self.total_steps {
            return fail("warmup_steps exceeds total_steps");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return fail("ema_decay must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if self.tasks.is_empty() {
            return fail("task set is empty");
        }
        LossNorm::from_p(self.loss_p)?;
        self.schedule.build()?;
        Ok(())
    }

    pub fn loss_norm(&self) -> Result<LossNorm> {
        LossNorm::from_p(self.loss_p)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            warmup_steps: self.warmup_steps,
            clip_grad_norm: self.clip_grad_norm,
            ..AdamConfig::default()
        }
    }
}

/// Everything that changes during training. Restoring a saved state and
/// continuing reproduces an uninterrupted run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T: Real> {
    pub step: u64,
    pub params: ParamStore<T>,
    pub ema: ParamStore<T>,
    pub adam: AdamState<T>,
    /// Noise levels and Gaussian noise.
    pub noise_rng: RngState,
    /// Data draws and corruptions.
    pub data_rng: RngState,
}

impl<T: Real> TrainState<T> {
    /// Fresh state with parameters initialized from `seed`.
    pub fn new(net: &UNet, seed: u64) -> Self {
        let root = RandomSource::seed_from_u64(seed);
        let params = net.init_params(&mut root.fork(0));
        Self {
            step: 0,
            ema: params.clone(),
            adam: AdamState::new(&params),
            params,
            noise_rng: root.fork(1).state(),
            data_rng: root.fork(2).state(),
        }
    }

    pub fn raw_view<'a>(&'a self, net: &'a UNet) -> ModelView<'a, T> {
        ModelView { net, params: &self.params }
    }

    pub fn ema_view<'a>(&'a self, net: &'a UNet) -> ModelView<'a, T> {
        ModelView { net, params: &self.ema }
    }
}

/// Produces training batches.
pub trait BatchSource<T: Real> {
    fn next_batch(&self, size: usize, rng: &mut RandomSource) -> Result<CorruptionBatch<T>>;
}

/// Clean images from a sampler, corrupted per task.
pub struct TaskBatches<'a, S> {
    pub images: S,
    pub tasks: Vec<Task>,
    pub corruptor: Corruptor<'a>,
}

impl<T: Real, S: ImageSampler<T>> BatchSource<T> for TaskBatches<'_, S> {
    fn next_batch(&self, size: usize, rng: &mut RandomSource) -> Result<CorruptionBatch<T>> {
        let (imgs, _) = self.images.sample_images(size, rng)?;
        let items: Vec<ImageTensor<T>> = (0..size).map(|i| imgs.item(i)).collect();
        self.corruptor.multi_task_batch(&items, &self.tasks, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f64,
    pub learning_rate: f64,
}

pub struct Trainer<'a> {
    pub net: &'a UNet,
    pub config: TrainConfig,
    schedule: NoiseSchedule,
    norm: LossNorm,
}

impl<'a> Trainer<'a> {
    pub fn new(net: &'a UNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { net, schedule: config.schedule.build()?, norm: config.loss_norm()?, config })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// One optimizer update on `batch`.
    pub fn train_step<T: Real>(&self, state: &mut TrainState<T>, batch: &CorruptionBatch<T>) -> Result<StepReport> {
        let mut noise_rng = RandomSource::from_state(&state.noise_rng);
        let shape = batch.y0.shape();
        let n = shape.n;
        let (input, gammas, target) = match self.config.objective {
            Objective::Diffusion => {
                let gammas: Vec<f64> = (0..n).map(|_| self.schedule.sample_training_gamma(&mut noise_rng)).collect();
                let eps = ImageTensor::randn(shape, &mut noise_rng);
                (forward_marginal_batch(&batch.y0, &gammas, &eps)?, gammas, eps)
            }
            Objective::Regression => (ImageTensor::zeros(shape), alloc::vec![1.0; n], batch.y0.clone()),
        };
        let mask = if batch.full_masks() { None } else { Some(broadcast_channels(&batch.mask, shape.c)?) };
        let step = state.step + 1;
        let (loss, grads) = {
            let mut tape = Tape::new(&state.params);
            let xv = tape.input_image(batch.x.clone());
            let yv = tape.input_image(input);
            let out = self.net.forward_tape(&mut tape, xv, yv, &gammas)?;
            let l = tape.lp_loss(out, target.data(), mask.as_ref().map(|m| m.data()), self.norm);
            let loss = tape.scalar(l).as_f64();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss });
            }
            (loss, tape.backward(l))
        };
        let lr = state.adam.update(&self.config.adam(), &mut state.params, &grads)?;
        ema_update(&mut state.ema, &state.params, self.config.ema_decay)?;
        state.step = step;
        state.noise_rng = noise_rng.state();
        Ok(StepReport { step, loss, learning_rate: lr })
    }

    /// Draws a batch with the state's data stream and trains on it.
    pub fn step_from<T: Real, B: BatchSource<T> + ?Sized>(&self, state: &mut TrainState<T>, source: &B) -> Result<StepReport> {
        let mut data_rng = RandomSource::from_state(&state.data_rng);
        let batch = source.next_batch(self.config.batch_size, &mut data_rng)?;
        state.data_rng = data_rng.state();
        self.train_step(state, &batch)
    }

    /// Trains until `state.step == until` (capped at `total_steps`),
    /// reporting every step.
    pub fn run<T: Real, B: BatchSource<T> + ?Sized>(
        &self,
        state: &mut TrainState<T>,
        source: &B,
        until: u64,
        mut on_step: impl FnMut(&StepReport),
    ) -> Result<()> {
        let until = until.min(self.config.total_steps);
        while state.step < until {
            let r = self.step_from(state, source)?;
            on_step(&r);
        }
        Ok(())
    }
}

/// Direct prediction of a regression-trained network.
pub fn regression_predict<T: Real>(model: &ModelView<'_, T>, x: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    let shape = x.shape().with_c(model.net.config().target_channels);
    model.forward_batch(x, &ImageTensor::zeros(shape), &alloc::vec![1.0; shape.n])
}
