//! Panoramas grown by repeatedly uncropping a sliding window.

#[cfg(not(feature = "std"))]
use num_traits::Float;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diffusion::{sample, Composite, Denoiser, SampleOptions};
use crate::tasks::{fill_with_noise, BinaryMask};
use crate::{Error, ImageTensor, NoiseSchedule, RandomSource, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Right,
    Left,
    /// Alternates right and left, `n_steps` on each side.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extend {
    Right,
    Left,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanoramaConfig {
    pub direction: Direction,
    pub n_steps: usize,
    pub step_fraction: f64,
    pub sample_options: SampleOptions,
}

impl Default for PanoramaConfig {
    fn default() -> Self {
        Self { direction: Direction::Both, n_steps: 8, step_fraction: 0.5, sample_options: SampleOptions::default() }
    }
}

/// One uncropping application.
#[derive(Debug, Clone)]
pub struct PanoramaStep<T: Real> {
    pub extend: Extend,
    /// Model input: observed columns plus noise in the generated columns.
    pub conditioning: ImageTensor<T>,
    /// 1 on generated columns.
    pub mask: BinaryMask,
    /// First column of the window in final canvas coordinates.
    pub window_start: usize,
}

#[derive(Debug, Clone)]
pub struct Panorama<T: Real> {
    pub canvas: ImageTensor<T>,
    pub steps: Vec<PanoramaStep<T>>,
}

/// Number of new columns per application: `step_fraction * w`, which must be
/// a whole number in `1..w`.
pub fn step_columns(w: usize, step_fraction: f64) -> Result<usize> {
    let s = step_fraction * w as f64;
    let r = s.round();
    if !(step_fraction > 0.0 && step_fraction < 1.0) || (s - r).abs() > 1e-9 || r < 1.0 {
        return Err(Error::InvalidArgument(alloc::format!(
            "step fraction {step_fraction} must give a whole number of columns in 1..{w}"
        )));
    }
    Ok(r as usize)
}

pub fn panorama_width(w: usize, config: &PanoramaConfig) -> Result<usize> {
    let sides = if config.direction == Direction::Both { 2 } else { 1 };
    Ok(w + sides * config.n_steps * step_columns(w, config.step_fraction)?)
}

pub fn panorama_uncrop<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    seed_image: &ImageTensor<T>,
    schedule: &NoiseSchedule,
    config: &PanoramaConfig,
    rng: &mut RandomSource,
) -> Result<Panorama<T>> {
    let s = seed_image.shape();
    if s.n != 1 {
        return Err(Error::shape(1, s.n));
    }
    if model.target_channels() != s.c {
        return Err(Error::shape(model.target_channels(), s.c));
    }
    let step = step_columns(s.w, config.step_fraction)?;
    let keep = s.w - step;
    let order: Vec<Extend> = match config.direction {
        Direction::Right => alloc::vec![Extend::Right; config.n_steps],
        Direction::Left => alloc::vec![Extend::Left; config.n_steps],
        Direction::Both => (0..2 * config.n_steps).map(|i| if i % 2 == 0 { Extend::Right } else { Extend::Left }).collect(),
    };

    let mut canvas = seed_image.clone();
    // Window starts relative to the seed's first column, fixed up at the end.
    let mut left_added = 0usize;
    let mut raw_steps = Vec::with_capacity(order.len());
    for extend in order {
        let width = canvas.shape().w;
        let mut mask = BinaryMask::zeros(s.h, s.w);
        let (observed, start_in_canvas) = match extend {
            Extend::Right => (canvas.crop_columns(width - keep, keep)?, width - keep),
            Extend::Left => (canvas.crop_columns(0, keep)?, 0),
        };
        let gen_cols = match extend {
            Extend::Right => keep..s.w,
            Extend::Left => 0..step,
        };
        for y in 0..s.h {
            for x in gen_cols.clone() {
                mask.set(y, x, true);
            }
        }
        let blank = ImageTensor::zeros(s.with_w(step));
        let window = match extend {
            Extend::Right => ImageTensor::concat_columns(&observed, &blank)?,
            Extend::Left => ImageTensor::concat_columns(&blank, &observed)?,
        };
        let conditioning = fill_with_noise(&window, &mask, rng)?;
        let composite = Composite { observed: window.clone(), mask: mask.to_tensor() };
        let out = sample(model, &conditioning, schedule, rng, Some(&composite), config.sample_options)?;
        let window_start = match extend {
            Extend::Right => {
                let fresh = out.crop_columns(keep, step)?;
                canvas = ImageTensor::concat_columns(&canvas, &fresh)?;
                start_in_canvas as isize - left_added as isize
            }
            Extend::Left => {
                let fresh = out.crop_columns(0, step)?;
                canvas = ImageTensor::concat_columns(&fresh, &canvas)?;
                left_added += step;
                -(left_added as isize)
            }
        };
        raw_steps.push((extend, conditioning, mask, window_start));
    }
    let steps = raw_steps
        .into_iter()
        .map(|(extend, conditioning, mask, start)| PanoramaStep {
            extend,
            conditioning,
            mask,
            window_start: (start + left_added as isize) as usize,
        })
        .collect();
    Ok(Panorama { canvas, steps })
}
