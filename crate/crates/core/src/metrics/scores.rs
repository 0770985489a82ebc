use alloc::vec::Vec;

use num_traits::Float;

use super::extractor::{FeatureExtractor, Features};
use crate::{Error, ImageTensor, Real, Result};

fn check_distribution(row: &[f64], i: usize) -> Result<()> {
    if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidDistribution { row: i, reason: alloc::format!("entry {v}") });
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution { row: i, reason: alloc::format!("sums to {s}") });
    }
    Ok(())
}

/// `exp(mean_i KL(p(y|x_i) || p(y)))` for row-major `[n, k]` class
/// posteriors.
pub fn inception_score(cond_probs: &[f64], k: usize) -> Result<f64> {
    if k == 0 || cond_probs.is_empty() || cond_probs.len() % k != 0 {
        return Err(Error::InvalidArgument("probability matrix must be non-empty n x k".into()));
    }
    let n = cond_probs.len() / k;
    let mut marginal = alloc::vec![0.0; k];
    for (i, row) in cond_probs.chunks(k).enumerate() {
        check_distribution(row, i)?;
        for (m, p) in marginal.iter_mut().zip(row) {
            *m += p / n as f64;
        }
    }
    let mut kl = 0.0;
    for row in cond_probs.chunks(k) {
        for (p, m) in row.iter().zip(&marginal) {
            if *p > 0.0 {
                kl += p * Float::ln(p / m);
            }
        }
    }
    Ok(Float::exp(kl / n as f64).clamp(1.0, k as f64))
}

pub fn accuracy_from_predictions(predictions: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::shape(labels.len(), predictions.len()));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(alloc::format!("label {l} outside {k} classes")));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Top-1 accuracy of the extractor's own classifier head.
pub fn classification_accuracy<E: FeatureExtractor, T: Real>(
    extractor: &E,
    images: &ImageTensor<T>,
    labels: &[usize],
) -> Result<f64> {
    if labels.len() != images.shape().n {
        return Err(Error::shape(images.shape().n, labels.len()));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= extractor.num_classes()) {
        return Err(Error::InvalidArgument(alloc::format!("label {l} outside {} classes", extractor.num_classes())));
    }
    let f = extractor.extract(images)?;
    accuracy_from_predictions(&f.predictions(), labels, extractor.num_classes())
}

/// Mean Euclidean distance between aligned embedding rows.
pub fn embedding_distance(a: &Features, b: &Features) -> Result<f64> {
    if a.n != b.n || a.dim != b.dim || a.n == 0 {
        return Err(Error::shape((a.n, a.dim), (b.n, b.dim)));
    }
    let total: f64 = (0..a.n)
        .map(|i| {
            let s: f64 = a.embedding_row(i).iter().zip(b.embedding_row(i)).map(|(x, y)| (x - y) * (x - y)).sum();
            Float::sqrt(s)
        })
        .sum();
    Ok(total / a.n as f64)
}

/// Mean feature-space distance between paired images.
pub fn perceptual_distance<E: FeatureExtractor, T: Real>(
    extractor: &E,
    a: &ImageTensor<T>,
    b: &ImageTensor<T>,
) -> Result<f64> {
    if a.shape().n != b.shape().n {
        return Err(Error::shape(a.shape().n, b.shape().n));
    }
    embedding_distance(&extractor.extract(a)?, &extractor.extract(b)?)
}

/// LPIPS-style distance between item `ia` of `fa` and item `ib` of `fb`:
/// channel vectors are unit-normalized at every position, and the squared
/// distance is averaged over positions and then over layers.
pub fn map_distance(fa: &Features, ia: usize, fb: &Features, ib: usize) -> f64 {
    let mut total = 0.0;
    for (ma, mb) in fa.maps.iter().zip(&fb.maps) {
        let (c, hw) = (ma.c, ma.h * ma.w);
        let (xa, xb) = (ma.item(ia), mb.item(ib));
        let mut layer = 0.0;
        for p in 0..hw {
            let na = Float::sqrt((0..c).map(|ch| xa[ch * hw + p].powi(2)).sum::<f64>()) + 1e-10;
            let nb = Float::sqrt((0..c).map(|ch| xb[ch * hw + p].powi(2)).sum::<f64>()) + 1e-10;
            layer += (0..c).map(|ch| (xa[ch * hw + p] / na - xb[ch * hw + p] / nb).powi(2)).sum::<f64>();
        }
        total += layer / hw as f64;
    }
    total / fa.maps.len().max(1) as f64
}

/// Per-input mean distance between consecutive samples `(j, j + 1)`. Each
/// entry of `samples` is one input's `[k, c, h, w]` sample set.
pub fn per_input_feature_diversity<E: FeatureExtractor, T: Real>(
    extractor: &E,
    samples: &[ImageTensor<T>],
) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|set| {
            let k = set.shape().n;
            if k < 2 {
                return Err(Error::InvalidArgument(alloc::format!("need at least 2 samples per input, got {k}")));
            }
            let f = extractor.extract(set)?;
            Ok((0..k - 1).map(|j| map_distance(&f, j, &f, j + 1)).sum::<f64>() / (k - 1) as f64)
        })
        .collect()
}

/// Mean over inputs of [`per_input_feature_diversity`].
pub fn pairwise_feature_diversity<E: FeatureExtractor, T: Real>(extractor: &E, samples: &[ImageTensor<T>]) -> Result<f64> {
    let v = per_input_feature_diversity(extractor, samples)?;
    if v.is_empty() {
        return Err(Error::InvalidArgument("no inputs".into()));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}
