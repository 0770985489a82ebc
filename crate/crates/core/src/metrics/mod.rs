//! Sample quality and diversity metrics computed in the feature space of a
//! small locally trained classifier. Values are comparable across models
//! scored with the same frozen extractor, not with published numbers.

mod bootstrap;
mod extractor;
mod linalg;
mod scores;
mod ssim;
mod stats;

pub use bootstrap::{bootstrap_ci, mean_difference_ci, Interval};
pub use extractor::{ClassifierConfig, ClassifierTraining, FeatureExtractor, FeatureMap, Features, SmallClassifier};
pub use linalg::symmetric_eigen;
pub use scores::{
    accuracy_from_predictions, classification_accuracy, embedding_distance, inception_score, map_distance,
    pairwise_feature_diversity, per_input_feature_diversity, perceptual_distance,
};
pub use ssim::{ms_ssim, ms_ssim_items, pairwise_msssim_diversity, SsimConfig, MS_SSIM_WEIGHTS};
pub use stats::{frechet_distance, FeatureStats, StatsAccumulator, PSD_TOLERANCE};

use crate::{ImageTensor, Real, Result};

/// Feature statistics of a batch of images.
pub fn image_stats<E: FeatureExtractor, T: Real>(extractor: &E, images: &ImageTensor<T>) -> Result<FeatureStats> {
    let f = extractor.extract(images)?;
    FeatureStats::from_rows(&f.embedding, f.dim)
}

/// FID-style distance between two image sets in the extractor's space.
pub fn feature_fid<E: FeatureExtractor, T: Real>(extractor: &E, a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<f64> {
    frechet_distance(&image_stats(extractor, a)?, &image_stats(extractor, b)?)
}

#[cfg(test)]
mod tests;
