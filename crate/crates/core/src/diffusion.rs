//! Forward noising, the Gaussian posterior and the iterative reverse sampler.

use alloc::vec::Vec;

use num_traits::Float;

use crate::autodiff::LossNorm;
use crate::{Error, ImageTensor, NoiseSchedule, RandomSource, Real, Result};

/// An epsilon-predictor `f(x, y_noisy, gamma)`.
pub trait Denoiser<T: Real> {
    /// Channels of the target image the model denoises.
    fn target_channels(&self) -> usize;

    /// Predicts the noise in `y` given conditioning `x`; `gammas` holds one
    /// noise level per batch item.
    fn predict_noise(&self, x: &ImageTensor<T>, y: &ImageTensor<T>, gammas: &[f64]) -> Result<ImageTensor<T>>;
}

impl<T: Real, D: Denoiser<T> + ?Sized> Denoiser<T> for &D {
    fn target_channels(&self) -> usize {
        (**self).target_channels()
    }

    fn predict_noise(&self, x: &ImageTensor<T>, y: &ImageTensor<T>, gammas: &[f64]) -> Result<ImageTensor<T>> {
        (**self).predict_noise(x, y, gammas)
    }
}

/// Adapts a closure into a [`Denoiser`], mostly for stubs in tests.
pub struct FnDenoiser<F> {
    pub channels: usize,
    pub f: F,
}

impl<T, F> Denoiser<T> for FnDenoiser<F>
where
    T: Real,
    F: Fn(&ImageTensor<T>, &ImageTensor<T>, &[f64]) -> Result<ImageTensor<T>>,
{
    fn target_channels(&self) -> usize {
        self.channels
    }

    fn predict_noise(&self, x: &ImageTensor<T>, y: &ImageTensor<T>, gammas: &[f64]) -> Result<ImageTensor<T>> {
        (self.f)(x, y, gammas)
    }
}

/// Norm of the loss and an optional binary mask selecting contributing
/// elements.
#[derive(Debug, Clone)]
pub struct LossSpec<T: Real> {
    pub norm: LossNorm,
    pub mask: Option<ImageTensor<T>>,
}

impl<T: Real> LossSpec<T> {
    pub fn new(norm: LossNorm) -> Self {
        Self { norm, mask: None }
    }

    pub fn with_mask(norm: LossNorm, mask: ImageTensor<T>) -> Self {
        Self { norm, mask: Some(mask) }
    }

    /// Mask for `target`, validated and broadcast over channels when it has
    /// a single channel.
    pub fn mask_for(&self, target: &ImageTensor<T>) -> Result<Option<Vec<T>>> {
        let Some(mask) = &self.mask else { return Ok(None) };
        let expanded = broadcast_channels(mask, target.shape().c)?;
        expanded.ensure_same_shape(target)?;
        if expanded.data().iter().any(|&m| m != T::zero() && m != T::one()) {
            return Err(Error::InvalidArgument("loss mask must be 0/1 valued".into()));
        }
        Ok(Some(expanded.into_data()))
    }
}

/// Repeats a single-channel tensor `c` times; other tensors pass through.
pub fn broadcast_channels<T: Real>(t: &ImageTensor<T>, c: usize) -> Result<ImageTensor<T>> {
    let s = t.shape();
    if s.c == c {
        return Ok(t.clone());
    }
    if s.c != 1 {
        return Err(Error::shape(s.with_c(c), s));
    }
    let plane = s.h * s.w;
    let mut out = Vec::with_capacity(s.n * c * plane);
    for item in t.data().chunks(plane) {
        for _ in 0..c {
            out.extend_from_slice(item);
        }
    }
    ImageTensor::from_vec(s.with_c(c), out)
}

fn check_unit(gamma: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(alloc::format!("{what} {gamma} outside [0, 1]")));
    }
    Ok(())
}

/// `sqrt(gamma) * y0 + sqrt(1 - gamma) * eps`.
pub fn forward_marginal<T: Real>(y0: &ImageTensor<T>, gamma: f64, eps: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    check_unit(gamma, "noise level")?;
    let (a, b) = (T::lit(Float::sqrt(gamma)), T::lit(Float::sqrt(1.0 - gamma)));
    y0.zip_map(eps, |y, e| a * y + b * e)
}

/// [`forward_marginal`] with a separate noise level per batch item.
pub fn forward_marginal_batch<T: Real>(
    y0: &ImageTensor<T>,
    gammas: &[f64],
    eps: &ImageTensor<T>,
) -> Result<ImageTensor<T>> {
    y0.ensure_same_shape(eps)?;
    let s = y0.shape();
    if gammas.len() != s.n {
        return Err(Error::shape(s.n, gammas.len()));
    }
    let mut out = y0.clone();
    let item = s.item();
    for (i, &g) in gammas.iter().enumerate() {
        check_unit(g, "noise level")?;
        let (a, b) = (T::lit(Float::sqrt(g)), T::lit(Float::sqrt(1.0 - g)));
        let range = i * item..(i + 1) * item;
        for (o, &e) in out.data_mut()[range.clone()].iter_mut().zip(&eps.data()[range]) {
            *o = a * *o + b * e;
        }
    }
    Ok(out)
}

/// Mean of `|pred - target|^p` over the masked elements, or over all
/// elements without a mask. An all-zero mask yields zero.
pub fn lp_loss<T: Real>(pred: &ImageTensor<T>, target: &ImageTensor<T>, loss: &LossSpec<T>) -> Result<f64> {
    pred.ensure_same_shape(target)?;
    let mask = loss.mask_for(target)?;
    let mut sum = 0.0;
    let mut count = 0.0;
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let m = mask.as_ref().map_or(1.0, |m| m[i].as_f64());
        if m != 0.0 {
            sum += m * loss.norm.apply((p - t).as_f64());
            count += m;
        }
    }
    Ok(if count > 0.0 { sum / count } else { 0.0 })
}

/// Noise-prediction loss for one noise level shared by the batch.
pub fn training_loss<T: Real, D: Denoiser<T>>(
    model: &D,
    x: &ImageTensor<T>,
    y0: &ImageTensor<T>,
    gamma: f64,
    eps: &ImageTensor<T>,
    loss: &LossSpec<T>,
) -> Result<f64> {
    let gammas = alloc::vec![gamma; y0.shape().n];
    training_loss_batch(model, x, y0, &gammas, eps, loss)
}

/// Noise-prediction loss with a noise level per batch item.
pub fn training_loss_batch<T: Real, D: Denoiser<T>>(
    model: &D,
    x: &ImageTensor<T>,
    y0: &ImageTensor<T>,
    gammas: &[f64],
    eps: &ImageTensor<T>,
    loss: &LossSpec<T>,
) -> Result<f64> {
    let noisy = forward_marginal_batch(y0, gammas, eps)?;
    let pred = model.predict_noise(x, &noisy, gammas)?;
    lp_loss(&pred, eps, loss)
}

/// Inverts the forward marginal under a noise estimate.
pub fn estimate_y0<T: Real>(y_t: &ImageTensor<T>, eps_hat: &ImageTensor<T>, gamma_t: f64) -> Result<ImageTensor<T>> {
    check_unit(gamma_t, "noise level")?;
    if gamma_t == 0.0 {
        return Err(Error::DegenerateNoiseLevel("cannot invert at gamma = 0".into()));
    }
    let inv = T::lit(1.0 / Float::sqrt(gamma_t));
    let b = T::lit(Float::sqrt(1.0 - gamma_t));
    y_t.zip_map(eps_hat, |y, e| (y - b * e) * inv)
}

/// Coefficients of the Gaussian posterior `q(y_{t-1} | y0, y_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoefficients {
    pub y0: f64,
    pub y_t: f64,
    pub variance: f64,
}

pub fn posterior_coefficients(schedule: &NoiseSchedule, t: usize) -> Result<PosteriorCoefficients> {
    schedule.check_step(t)?;
    let alpha = schedule.alpha(t);
    let g_prev = schedule.gamma(t - 1);
    let g = schedule.gamma(t);
    let denom = 1.0 - g;
    if denom <= 0.0 {
        return Err(Error::DegenerateNoiseLevel(alloc::format!("gamma_{t} = 1")));
    }
    Ok(PosteriorCoefficients {
        y0: Float::sqrt(g_prev) * (1.0 - alpha) / denom,
        y_t: Float::sqrt(alpha) * (1.0 - g_prev) / denom,
        variance: (1.0 - g_prev) * (1.0 - alpha) / denom,
    })
}

/// Posterior mean and variance of `y_{t-1}` given `y0` and `y_t`.
pub fn posterior_params<T: Real>(
    y0: &ImageTensor<T>,
    y_t: &ImageTensor<T>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<(ImageTensor<T>, f64)> {
    let c = posterior_coefficients(schedule, t)?;
    let (a, b) = (T::lit(c.y0), T::lit(c.y_t));
    let mu = y0.zip_map(y_t, |y0, yt| a * y0 + b * yt)?;
    Ok((mu, c.variance))
}

/// One ancestral step from `y_t` to `y_{t-1}`. No noise is added at `t = 1`.
pub fn reverse_step<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    x: &ImageTensor<T>,
    y_t: &ImageTensor<T>,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut RandomSource,
) -> Result<ImageTensor<T>> {
    reverse_step_with(model, x, y_t, t, schedule, rng, SampleOptions::default())
}

/// [`reverse_step`] honouring [`SampleOptions::clip_denoised`].
pub fn reverse_step_with<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    x: &ImageTensor<T>,
    y_t: &ImageTensor<T>,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut RandomSource,
    options: SampleOptions,
) -> Result<ImageTensor<T>> {
    schedule.check_step(t)?;
    let gamma = schedule.gamma(t);
    let eps = model.predict_noise(x, y_t, &alloc::vec![gamma; y_t.shape().n])?;
    eps.ensure_same_shape(y_t)?;
    if options.clip_denoised {
        clipped_step(y_t, &eps, t, schedule, rng)
    } else {
        Ok(step_with_noise(y_t, &eps, t, schedule, rng))
    }
}

fn step_with_noise<T: Real>(
    y_t: &ImageTensor<T>,
    eps: &ImageTensor<T>,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut RandomSource,
) -> ImageTensor<T> {
    let alpha = schedule.alpha(t);
    let inv_sqrt_alpha = 1.0 / Float::sqrt(alpha);
    let coef = (1.0 - alpha) / Float::sqrt(1.0 - schedule.gamma(t));
    let sigma = Float::sqrt(1.0 - alpha);
    let mut out = y_t.clone();
    for (o, &e) in out.data_mut().iter_mut().zip(eps.data()) {
        let mean = (o.as_f64() - coef * e.as_f64()) * inv_sqrt_alpha;
        let z = if t > 1 { rng.normal() } else { 0.0 };
        *o = T::lit(mean + sigma * z);
    }
    out
}

/// Same mean as [`step_with_noise`] written through the posterior, with the
/// implied `y0` estimate clamped to `[-1, 1]` first.
fn clipped_step<T: Real>(
    y_t: &ImageTensor<T>,
    eps: &ImageTensor<T>,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut RandomSource,
) -> Result<ImageTensor<T>> {
    let c = posterior_coefficients(schedule, t)?;
    let g = schedule.gamma(t);
    if g == 0.0 {
        return Err(Error::DegenerateNoiseLevel(alloc::format!("gamma_{t} = 0")));
    }
    let (inv_sqrt_g, b) = (1.0 / Float::sqrt(g), Float::sqrt(1.0 - g));
    let sigma = Float::sqrt(1.0 - schedule.alpha(t));
    let mut out = y_t.clone();
    for (o, &e) in out.data_mut().iter_mut().zip(eps.data()) {
        let y = o.as_f64();
        let y0 = ((y - b * e.as_f64()) * inv_sqrt_g).clamp(-1.0, 1.0);
        let z = if t > 1 { rng.normal() } else { 0.0 };
        *o = T::lit(c.y0 * y0 + c.y_t * y + sigma * z);
    }
    Ok(out)
}

/// Observed pixels kept outside the generated region.
#[derive(Debug, Clone)]
pub struct Composite<T: Real> {
    pub observed: ImageTensor<T>,
    /// 1 where the sample is used, 0 where `observed` is kept.
    pub mask: ImageTensor<T>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SampleOptions {
    /// Clamp the final output to `[-1, 1]`.
    pub clip_final: bool,
    /// Clamp the `y0` estimate implied by each noise prediction to
    /// `[-1, 1]` and step through the posterior mean. Keeps the chain
    /// bounded when the network does not reproduce `y_t` at high noise.
    #[serde(default)]
    pub clip_denoised: bool,
}

/// Runs the full reverse chain from `y_T ~ N(0, I)` down to `y_0`.
pub fn sample<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    x: &ImageTensor<T>,
    schedule: &NoiseSchedule,
    rng: &mut RandomSource,
    composite: Option<&Composite<T>>,
    options: SampleOptions,
) -> Result<ImageTensor<T>> {
    sample_with(model, x, schedule, rng, composite, options, |_, _| {})
}

/// [`sample`] with a callback invoked on every intermediate `y_{t-1}`.
pub fn sample_with<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    x: &ImageTensor<T>,
    schedule: &NoiseSchedule,
    rng: &mut RandomSource,
    composite: Option<&Composite<T>>,
    options: SampleOptions,
    mut on_step: impl FnMut(usize, &ImageTensor<T>),
) -> Result<ImageTensor<T>> {
    let shape = x.shape().with_c(model.target_channels());
    let mask = match composite {
        Some(c) => {
            c.observed.ensure_same_shape(&ImageTensor::zeros(shape))?;
            let m = broadcast_channels(&c.mask, shape.c)?;
            m.ensure_same_shape(&c.observed)?;
            if m.data().iter().any(|&v| v != T::zero() && v != T::one()) {
                return Err(Error::InvalidArgument("composite mask must be 0/1 valued".into()));
            }
            Some(m)
        }
        None => None,
    };
    let mut y = ImageTensor::randn(shape, rng);
    for t in (1..=schedule.steps()).rev() {
        y = reverse_step_with(model, x, &y, t, schedule, rng, options)?;
        on_step(t - 1, &y);
    }
    if options.clip_final {
        y = y.clamp(-T::one(), T::one());
    }
    if let (Some(c), Some(m)) = (composite, mask) {
        for ((o, &obs), &mv) in y.data_mut().iter_mut().zip(c.observed.data()).zip(m.data()) {
            if mv == T::zero() {
                *o = obs;
            }
        }
    }
    Ok(y)
}
