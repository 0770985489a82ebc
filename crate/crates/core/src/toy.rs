//! Synthetic datasets small enough to train on a CPU in minutes.
//!
//! [`ToyColorization`] images are a luminance pattern plus one constant
//! chroma offset drawn from a few modes with unequal prior weights. The
//! chroma directions have zero luma, so the grayscale input carries no
//! information about the mode and the colorization posterior is exactly the
//! mode prior.

use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::tasks::LUMA;
use crate::{Error, ImageTensor, RandomSource, Real, Result, Shape4};

/// Draws batches of clean target images.
pub trait ImageSampler<T: Real> {
    fn image_shape(&self) -> Shape4;

    /// `n` images and, when the source has them, class labels.
    fn sample_images(&self, n: usize, rng: &mut RandomSource) -> Result<(ImageTensor<T>, Option<Vec<usize>>)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyColorization {
    pub size: usize,
    /// Prior weight of each chroma mode.
    pub priors: Vec<f64>,
    /// Chroma offset amplitude range.
    pub amplitude: (f64, f64),
    /// Peak amplitude of the luminance pattern.
    pub luminance: f64,
}

impl Default for ToyColorization {
    fn default() -> Self {
        Self { size: 8, priors: alloc::vec![0.6, 0.25, 0.15], amplitude: (0.3, 0.45), luminance: 0.5 }
    }
}

/// Unit-max chroma direction at angle `theta` in the plane orthogonal to the
/// luma weights.
pub fn chroma_direction(theta: f64) -> [f64; 3] {
    let w = LUMA;
    // u1 orthogonal to w in the R-G plane, u2 = w x u1.
    let u1 = [w[1], -w[0], 0.0];
    let u2 = [w[1] * u1[2] - w[2] * u1[1], w[2] * u1[0] - w[0] * u1[2], w[0] * u1[1] - w[1] * u1[0]];
    let norm = |v: [f64; 3]| Float::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    let (n1, n2) = (norm(u1), norm(u2));
    let (c, s) = (Float::cos(theta), Float::sin(theta));
    let mut v = [0.0; 3];
    for i in 0..3 {
        v[i] = c * u1[i] / n1 + s * u2[i] / n2;
    }
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    v.map(|x| x / m)
}

impl ToyColorization {
    pub fn modes(&self) -> usize {
        self.priors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.priors.iter().sum();
        if self.priors.len() < 2 || self.priors.iter().any(|&p| p <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("mode priors must be >= 2 positive weights summing to 1".into()));
        }
        let (lo, hi) = self.amplitude;
        if !(0.0 <= lo && lo <= hi) || self.luminance < 0.0 || self.luminance + hi > 1.0 {
            return Err(Error::InvalidConfig("toy amplitudes leave the [-1, 1] range".into()));
        }
        if self.size < 2 {
            return Err(Error::InvalidConfig("toy images need at least 2x2 pixels".into()));
        }
        Ok(())
    }

    /// Chroma direction of mode `k`; modes are evenly spaced in angle.
    pub fn chroma(&self, k: usize) -> [f64; 3] {
        chroma_direction(core::f64::consts::TAU * k as f64 / self.modes() as f64)
    }

    pub fn sample_mode(&self, rng: &mut RandomSource) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (k, p) in self.priors.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.modes() - 1
    }

    /// Smooth pattern in `[-luminance, luminance]`: the mean of two random
    /// plane waves.
    pub fn luminance_pattern(&self, rng: &mut RandomSource) -> Vec<f64> {
        let n = self.size;
        let mut waves = [(0.0, 0.0, 0.0); 2];
        for wv in waves.iter_mut() {
            let f = rng.uniform_range(0.3, 1.2);
            let a = rng.uniform() * core::f64::consts::TAU;
            *wv = (f * Float::cos(a), f * Float::sin(a), rng.uniform() * core::f64::consts::TAU);
        }
        let mut out = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let v: f64 = waves.iter().map(|(fy, fx, ph)| Float::cos(fy * y as f64 + fx * x as f64 + ph)).sum::<f64>() / 2.0;
                out.push(self.luminance * v);
            }
        }
        out
    }

    /// Builds the image for a given pattern, mode and amplitude.
    pub fn compose<T: Real>(&self, pattern: &[f64], mode: usize, amplitude: f64) -> Result<ImageTensor<T>> {
        let plane = self.size * self.size;
        let c = self.chroma(mode);
        let mut data = Vec::with_capacity(3 * plane);
        for ch in c {
            data.extend(pattern.iter().map(|l| T::lit(l + amplitude * ch)));
        }
        ImageTensor::from_vec(Shape4::new(1, 3, self.size, self.size), data)
    }

    pub fn sample<T: Real>(&self, rng: &mut RandomSource) -> Result<(ImageTensor<T>, usize)> {
        let mode = self.sample_mode(rng);
        let amp = rng.uniform_range(self.amplitude.0, self.amplitude.1);
        let pattern = self.luminance_pattern(rng);
        Ok((self.compose(&pattern, mode, amp)?, mode))
    }
}

impl<T: Real> ImageSampler<T> for ToyColorization {
    fn image_shape(&self) -> Shape4 {
        Shape4::new(1, 3, self.size, self.size)
    }

    fn sample_images(&self, n: usize, rng: &mut RandomSource) -> Result<(ImageTensor<T>, Option<Vec<usize>>)> {
        self.validate()?;
        let mut imgs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (img, k) = self.sample(rng)?;
            imgs.push(img);
            labels.push(k);
        }
        Ok((ImageTensor::stack(&imgs)?, Some(labels)))
    }
}

/// Every draw is the same image.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantImage<T: Real> {
    pub image: ImageTensor<T>,
}

impl<T: Real> ConstantImage<T> {
    /// A fixed toy image: pattern from `seed`, the first chroma mode.
    pub fn toy(size: usize, seed: u64) -> Result<Self> {
        let toy = ToyColorization { size, ..Default::default() };
        let mut rng = RandomSource::seed_from_u64(seed);
        let pattern = toy.luminance_pattern(&mut rng);
        Ok(Self { image: toy.compose(&pattern, 0, toy.amplitude.1)? })
    }
}

impl<T: Real> ImageSampler<T> for ConstantImage<T> {
    fn image_shape(&self) -> Shape4 {
        self.image.shape()
    }

    fn sample_images(&self, n: usize, _rng: &mut RandomSource) -> Result<(ImageTensor<T>, Option<Vec<usize>>)> {
        Ok((self.image.repeat_items(n), Some(alloc::vec![0; n])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::to_grayscale;

    #[test]
    fn chroma_has_zero_luma() {
        let t = ToyColorization::default();
        for k in 0..t.modes() {
            let c = t.chroma(k);
            let l: f64 = c.iter().zip(LUMA).map(|(a, b)| a * b).sum();
            assert!(l.abs() < 1e-15);
            assert!((c.iter().fold(0.0f64, |a, x| a.max(x.abs())) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn grayscale_removes_the_mode() {
        let t = ToyColorization::default();
        let mut rng = RandomSource::seed_from_u64(1);
        let pattern = t.luminance_pattern(&mut rng);
        let grays: Vec<_> = (0..3).map(|k| to_grayscale(&t.compose::<f64>(&pattern, k, 0.4).unwrap()).unwrap()).collect();
        for g in &grays[1..] {
            assert!(g.max_abs_diff(&grays[0]).unwrap() < 1e-12);
        }
        for (i, l) in pattern.iter().enumerate() {
            assert!((grays[0].data()[i] - l).abs() < 1e-12);
        }
    }

    #[test]
    fn samples_in_range_with_prior_frequencies() {
        let t = ToyColorization::default();
        let mut rng = RandomSource::seed_from_u64(2);
        let (imgs, labels) = ImageSampler::<f64>::sample_images(&t, 6000, &mut rng).unwrap();
        assert!(imgs.data().iter().all(|v| v.abs() <= 1.0));
        let labels = labels.unwrap();
        for (k, p) in t.priors.iter().enumerate() {
            let f = labels.iter().filter(|&&l| l == k).count() as f64 / 6000.0;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / 6000.0).sqrt());
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = ToyColorization { priors: alloc::vec![0.5, 0.6], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ToyColorization { luminance: 0.7, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
