//! Sample diversity study comparing models trained with different loss
//! norms on the same inputs.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diffusion::{sample, Denoiser, SampleOptions};
use crate::metrics::{
    embedding_distance, frechet_distance, image_stats, mean_difference_ci, pairwise_msssim_diversity,
    per_input_feature_diversity, FeatureExtractor, FeatureStats, Interval, SsimConfig,
};
use crate::{Error, ImageTensor, NoiseSchedule, RandomSource, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityConfig {
    pub samples_per_input: usize,
    pub ssim: SsimConfig,
    pub histogram_bins: usize,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
    pub sample_options: SampleOptions,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            samples_per_input: 4,
            ssim: SsimConfig::default(),
            histogram_bins: 20,
            bootstrap_resamples: 2000,
            confidence: 0.95,
            sample_options: SampleOptions::default(),
        }
    }
}

/// Counts of values in equal-width bins over `[lo, hi]`; values outside are
/// clamped into the end bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let mut counts = alloc::vec![0; bins.max(1)];
        let width = (hi - lo) / counts.len() as f64;
        for &v in values {
            let b = (((v - lo) / width) as isize).clamp(0, counts.len() as isize - 1) as usize;
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDiversity {
    pub name: String,
    /// FID-style distance of all samples to the reference set.
    pub fid: f64,
    /// Mean feature distance of each input's first sample to its target.
    pub perceptual_distance: f64,
    /// Mean consecutive-pair feature distance.
    pub feature_diversity: f64,
    pub per_input_diversity: Vec<f64>,
    /// Pooled first-vs-rest MS-SSIM values.
    pub msssim: Vec<f64>,
    pub msssim_mean: f64,
    pub msssim_histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub first: String,
    pub second: String,
    /// `first - second` of mean feature diversity.
    pub diversity_difference: IntervalRecord,
    /// `first - second` of mean pooled MS-SSIM.
    pub msssim_difference: IntervalRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl From<Interval> for IntervalRecord {
    fn from(i: Interval) -> Self {
        Self { estimate: i.estimate, lo: i.lo, hi: i.hi }
    }
}

impl IntervalRecord {
    pub fn excludes(&self, v: f64) -> bool {
        v < self.lo || v > self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub inputs: usize,
    pub samples_per_input: usize,
    pub models: Vec<ModelDiversity>,
    /// Pairwise comparisons of consecutive models in `models`.
    pub comparisons: Vec<Comparison>,
}

/// Draws `k` samples for every input in one batched reverse chain and
/// returns one `[k, c, h, w]` set per input.
pub fn draw_sample_sets<T: Real, D: Denoiser<T> + ?Sized>(
    model: &D,
    x: &ImageTensor<T>,
    k: usize,
    schedule: &NoiseSchedule,
    options: SampleOptions,
    rng: &mut RandomSource,
) -> Result<Vec<ImageTensor<T>>> {
    let all = sample(model, &x.repeat_items(k), schedule, rng, None, options)?;
    Ok((0..x.shape().n).map(|i| all.slice(i * k, (i + 1) * k)).collect())
}

/// Scores already drawn sample sets.
#[allow(clippy::too_many_arguments)]
pub fn score_sample_sets<T: Real, E: FeatureExtractor>(
    name: &str,
    sets: &[ImageTensor<T>],
    targets: &ImageTensor<T>,
    reference: &FeatureStats,
    extractor: &E,
    config: &DiversityConfig,
) -> Result<ModelDiversity> {
    let all = ImageTensor::stack(sets)?;
    let fid = frechet_distance(&image_stats(extractor, &all)?, reference)?;
    let firsts = ImageTensor::stack(&sets.iter().map(|s| s.item(0)).collect::<Vec<_>>())?;
    let pd = embedding_distance(&extractor.extract(&firsts)?, &extractor.extract(targets)?)?;
    let per_input = per_input_feature_diversity(extractor, sets)?;
    let msssim = pairwise_msssim_diversity(sets, &config.ssim)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ModelDiversity {
        name: name.into(),
        fid,
        perceptual_distance: pd,
        feature_diversity: mean(&per_input),
        msssim_mean: mean(&msssim),
        msssim_histogram: Histogram::new(&msssim, config.histogram_bins, -1.0, 1.0),
        per_input_diversity: per_input,
        msssim,
    })
}

pub fn compare(a: &ModelDiversity, b: &ModelDiversity, config: &DiversityConfig, rng: &mut RandomSource) -> Result<Comparison> {
    let div = mean_difference_ci(&a.per_input_diversity, &b.per_input_diversity, config.bootstrap_resamples, config.confidence, rng)?;
    let ssim = mean_difference_ci(&a.msssim, &b.msssim, config.bootstrap_resamples, config.confidence, rng)?;
    Ok(Comparison {
        first: a.name.clone(),
        second: b.name.clone(),
        diversity_difference: div.into(),
        msssim_difference: ssim.into(),
    })
}

/// Samples every model on the same inputs and reports quality and diversity.
/// `targets` are the ground truth for `x`; `reference` holds feature stats of
/// held-out clean images.
#[allow(clippy::too_many_arguments)]
pub fn diversity_study<T: Real, E: FeatureExtractor>(
    models: &[(&str, &dyn Denoiser<T>)],
    x: &ImageTensor<T>,
    targets: &ImageTensor<T>,
    reference: &FeatureStats,
    extractor: &E,
    schedule: &NoiseSchedule,
    config: &DiversityConfig,
    rng: &mut RandomSource,
) -> Result<DiversityReport> {
    if config.samples_per_input < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "need at least 2 samples per input, got {}",
            config.samples_per_input
        )));
    }
    if targets.shape().n != x.shape().n {
        return Err(Error::shape(x.shape().n, targets.shape().n));
    }
    let mut reports = Vec::with_capacity(models.len());
    for (i, (name, model)) in models.iter().enumerate() {
        let mut stream = rng.fork(i as u64);
        let sets = draw_sample_sets(*model, x, config.samples_per_input, schedule, config.sample_options, &mut stream)?;
        reports.push(score_sample_sets(name, &sets, targets, reference, extractor, config)?);
    }
    let mut cmp_rng = rng.fork(u64::MAX / 2);
    let comparisons =
        reports.windows(2).map(|w| compare(&w[0], &w[1], config, &mut cmp_rng)).collect::<Result<Vec<_>>>()?;
    Ok(DiversityReport { inputs: x.shape().n, samples_per_input: config.samples_per_input, models: reports, comparisons })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::FnDenoiser;
    use crate::metrics::{FeatureMap, Features};
    use crate::Shape4;

    struct MeanExtractor;

    impl FeatureExtractor for MeanExtractor {
        fn num_classes(&self) -> usize {
            3
        }
        fn feature_dim(&self) -> usize {
            3
        }
        fn extract<T: Real>(&self, images: &ImageTensor<T>) -> Result<Features> {
            let s = images.shape();
            let plane = s.h * s.w;
            let embedding: Vec<f64> =
                images.data().chunks(plane).map(|p| p.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64).collect();
            Ok(Features {
                n: s.n,
                num_classes: 3,
                logits: embedding.clone(),
                dim: 3,
                embedding,
                maps: alloc::vec![FeatureMap { c: s.c, h: s.h, w: s.w, data: images.data().iter().map(|v| v.as_f64()).collect() }],
            })
        }
    }

    /// Noise prediction that makes every chain end at the same image: the
    /// final step at t=1 has no noise, and the model absorbs `y_1` entirely.
    fn deterministic_end(schedule: &NoiseSchedule) -> impl Fn(&ImageTensor<f64>, &ImageTensor<f64>, &[f64]) -> Result<ImageTensor<f64>> + '_ {
        move |x, y, g| {
            let g1 = schedule.gamma(1);
            if (g[0] - g1).abs() < 1e-15 {
                // y_0 = (y_1 - c f) / sqrt(a) = x  =>  f = (y_1 - sqrt(a) x) / c.
                let a = schedule.alpha(1);
                let c = (1.0 - a) / (1.0 - g1).sqrt();
                y.zip_map(x, |yv, xv| (yv - a.sqrt() * xv) / c)
            } else {
                Ok(ImageTensor::zeros(y.shape()))
            }
        }
    }

    #[test]
    fn identical_deterministic_model_has_no_diversity() {
        let schedule = NoiseSchedule::from_betas(alloc::vec![0.1, 0.2, 0.3]).unwrap();
        let f = deterministic_end(&schedule);
        let model = FnDenoiser { channels: 3, f };
        let mut rng = RandomSource::seed_from_u64(1);
        let x = ImageTensor::<f64>::randn(Shape4::new(3, 3, 8, 8), &mut rng);
        let reference = FeatureStats::from_rows(&(0..30).map(|_| rng.normal()).collect::<Vec<_>>(), 3).unwrap();
        let cfg = DiversityConfig { samples_per_input: 3, ssim: SsimConfig::single_scale(3, 1.0), bootstrap_resamples: 50, ..Default::default() };
        let r = diversity_study(&[("a", &model), ("b", &model)], &x, &x, &reference, &MeanExtractor, &schedule, &cfg, &mut rng).unwrap();
        for m in &r.models {
            assert!(m.feature_diversity.abs() < 1e-12, "{}", m.feature_diversity);
            assert!(m.msssim.iter().all(|&v| (v - 1.0).abs() < 1e-12));
            assert!(m.perceptual_distance.abs() < 1e-9);
            assert_eq!(m.msssim_histogram.counts.iter().sum::<usize>(), 6);
        }
        assert_eq!(r.comparisons.len(), 1);
        let bad = DiversityConfig { samples_per_input: 1, ..cfg };
        assert!(diversity_study(&[("a", &model)], &x, &x, &reference, &MeanExtractor, &schedule, &bad, &mut rng).is_err());
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::new(&[-1.0, -0.95, 0.0, 0.99, 1.0, 2.0], 4, -1.0, 1.0);
        assert_eq!(h.counts, alloc::vec![2, 0, 1, 3]);
    }
}
