//! U-Net noise predictor with concatenation conditioning and the four
//! long-range context variants.

mod config;
mod embedding;
mod unet;

use alloc::vec::Vec;

pub use config::{ArchitectureConfig, Variant};
pub use embedding::{sinusoidal_embedding, GAMMA_SCALE};
pub use unet::{ParamSpec, UNet};

use crate::autodiff::{ParamStore, Tape};
use crate::diffusion::Denoiser;
use crate::{Error, ImageTensor, RandomSource, Real, Result};

/// Largest batch pushed through one forward pass. The tape keeps every
/// intermediate, so big inference batches are split.
pub const INFERENCE_CHUNK: usize = 32;

/// A network together with its parameters.
#[derive(Debug, Clone)]
pub struct DenoiserModel<T: Real = f32> {
    pub net: UNet,
    pub params: ParamStore<T>,
}

impl<T: Real> DenoiserModel<T> {
    pub fn new(config: ArchitectureConfig, rng: &mut RandomSource) -> Result<Self> {
        let net = UNet::new(config)?;
        let params = net.init_params(rng);
        Ok(Self { net, params })
    }

    pub fn from_params(config: ArchitectureConfig, params: ParamStore<T>) -> Result<Self> {
        let net = UNet::new(config)?;
        net.check_params(&params)?;
        Ok(Self { net, params })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        self.net.config()
    }

    /// Conditioning plus target channels entering the first convolution.
    pub fn in_channels(&self) -> usize {
        self.config().cond_channels + self.config().target_channels
    }

    pub fn view(&self) -> ModelView<'_, T> {
        ModelView { net: &self.net, params: &self.params }
    }

    /// Forward pass with one noise level for the whole batch.
    pub fn forward(&self, x: &ImageTensor<T>, y_noisy: &ImageTensor<T>, gamma: f64) -> Result<ImageTensor<T>> {
        self.view().forward_batch(x, y_noisy, &alloc::vec![gamma; y_noisy.shape().n])
    }

    /// Projected embedding of `gamma`.
    pub fn gamma_embedding(&self, gamma: f64) -> Result<Vec<T>> {
        self.net.gamma_embedding(&self.params, gamma)
    }
}

/// A network paired with borrowed parameters, such as an EMA copy.
#[derive(Debug, Clone, Copy)]
pub struct ModelView<'a, T: Real> {
    pub net: &'a UNet,
    pub params: &'a ParamStore<T>,
}

impl<T: Real> ModelView<'_, T> {
    pub fn forward_batch(&self, x: &ImageTensor<T>, y: &ImageTensor<T>, gammas: &[f64]) -> Result<ImageTensor<T>> {
        self.net.validate_inputs(x.shape(), y.shape(), gammas)?;
        let n = y.shape().n;
        if n <= INFERENCE_CHUNK {
            return self.net.forward(self.params, x, y, gammas);
        }
        let mut parts = Vec::with_capacity(n.div_ceil(INFERENCE_CHUNK));
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(n);
            let (xs, ys) = (x.slice(start, end), y.slice(start, end));
            parts.push(self.net.forward(self.params, &xs, &ys, &gammas[start..end])?);
        }
        ImageTensor::stack(&parts)
    }
}

impl<T: Real> Denoiser<T> for ModelView<'_, T> {
    fn target_channels(&self) -> usize {
        self.net.config().target_channels
    }

    fn predict_noise(&self, x: &ImageTensor<T>, y: &ImageTensor<T>, gammas: &[f64]) -> Result<ImageTensor<T>> {
        self.forward_batch(x, y, gammas)
    }
}

impl<T: Real> Denoiser<T> for DenoiserModel<T> {
    fn target_channels(&self) -> usize {
        self.config().target_channels
    }

    fn predict_noise(&self, x: &ImageTensor<T>, y: &ImageTensor<T>, gammas: &[f64]) -> Result<ImageTensor<T>> {
        self.view().forward_batch(x, y, gammas)
    }
}

/// Parameter-free self-attention (identity query, key and value maps)
/// computed independently inside each quadrant of a 2x2 block grid.
pub fn local_self_attention<T: Real>(features: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    let s = features.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::InvalidShape(alloc::format!(
            "local attention needs even spatial dims, got {}x{}",
            s.h,
            s.w
        )));
    }
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let v = tape.input_image(features.clone());
    let out = tape.attention(v, v, v, true);
    tape.image(out)
}

#[cfg(test)]
mod tests;
