use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::{Error, RandomSource, Shape4};

/// Embedding = per-channel pixel means; logits = embedding; the one map is
/// the image itself.
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
            maps: vec![FeatureMap { c: s.c, h: s.h, w: s.w, data: images.data().iter().map(|v| v.as_f64()).collect() }],
        })
    }
}

fn batch(seed: u64, n: usize) -> ImageTensor<f64> {
    ImageTensor::randn(Shape4::new(n, 3, 4, 4), &mut RandomSource::seed_from_u64(seed))
}

#[test]
fn inception_score_cases() {
    let same = [0.2, 0.5, 0.3].repeat(4);
    assert!((inception_score(&same, 3).unwrap() - 1.0).abs() < 1e-12);
    assert!((inception_score(&[1.0, 0.0, 0.0, 1.0], 2).unwrap() - 2.0).abs() < 1e-12);
    for k in [3usize, 5, 10] {
        let mut rows = Vec::new();
        for i in 0..4 * k {
            let mut r = vec![0.0; k];
            r[i % k] = 1.0;
            rows.extend(r);
        }
        assert!((inception_score(&rows, k).unwrap() - k as f64).abs() < 1e-9);
    }
    let mut rng = RandomSource::seed_from_u64(1);
    for _ in 0..50 {
        let mut rows = Vec::new();
        for _ in 0..7 {
            let r: Vec<f64> = (0..4).map(|_| rng.uniform() + 1e-3).collect();
            let z: f64 = r.iter().sum();
            rows.extend(r.into_iter().map(|v| v / z));
        }
        let s = inception_score(&rows, 4).unwrap();
        assert!((1.0..=4.0).contains(&s));
    }
    assert!(matches!(inception_score(&[0.5, 0.6], 2), Err(Error::InvalidDistribution { row: 0, .. })));
    assert!(matches!(inception_score(&[0.5, 0.5, 1.5, -0.5], 2), Err(Error::InvalidDistribution { row: 1, .. })));
}

#[test]
fn accuracy_cases() {
    let imgs = batch(2, 10);
    let preds = MeanExtractor.extract(&imgs).unwrap().predictions();
    assert_eq!(classification_accuracy(&MeanExtractor, &imgs, &preds).unwrap(), 1.0);
    let wrong: Vec<usize> = preds.iter().map(|p| (p + 1) % 3).collect();
    assert_eq!(classification_accuracy(&MeanExtractor, &imgs, &wrong).unwrap(), 0.0);
    let half: Vec<usize> = preds.iter().enumerate().map(|(i, &p)| if i < 5 { p } else { (p + 2) % 3 }).collect();
    assert_eq!(classification_accuracy(&MeanExtractor, &imgs, &half).unwrap(), 0.5);
    assert!(classification_accuracy(&MeanExtractor, &imgs, &[3; 10]).is_err());
    assert!(classification_accuracy(&MeanExtractor, &imgs, &[0; 9]).is_err());
}

#[test]
fn perceptual_distance_cases() {
    let a = batch(3, 6);
    assert_eq!(perceptual_distance(&MeanExtractor, &a, &a).unwrap(), 0.0);
    let v = [0.3, -0.4, 1.2];
    let mut b = a.clone();
    let plane = 16;
    for (i, x) in b.data_mut().iter_mut().enumerate() {
        *x += v[(i / plane) % 3];
    }
    let norm = (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    assert!((perceptual_distance(&MeanExtractor, &a, &b).unwrap() - norm).abs() < 1e-12);
    // Loop oracle on unrelated batches.
    let c = batch(4, 6);
    let (fa, fc) = (MeanExtractor.extract(&a).unwrap(), MeanExtractor.extract(&c).unwrap());
    let mut total = 0.0;
    for i in 0..6 {
        let mut s = 0.0;
        for j in 0..3 {
            s += (fa.embedding[i * 3 + j] - fc.embedding[i * 3 + j]).powi(2);
        }
        total += s.sqrt();
    }
    assert!((perceptual_distance(&MeanExtractor, &a, &c).unwrap() - total / 6.0).abs() < 1e-6);
    assert!(perceptual_distance(&MeanExtractor, &a, &batch(5, 5)).is_err());
}

fn oracle_diversity(sets: &[ImageTensor<f64>]) -> f64 {
    let mut outer = 0.0;
    for set in sets {
        let s = set.shape();
        let mut inner = 0.0;
        for j in 0..s.n - 1 {
            let mut d = 0.0;
            for y in 0..s.h {
                for x in 0..s.w {
                    let va: Vec<f64> = (0..s.c).map(|c| set.at(j, c, y, x)).collect();
                    let vb: Vec<f64> = (0..s.c).map(|c| set.at(j + 1, c, y, x)).collect();
                    let na = va.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-10;
                    let nb = vb.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-10;
                    d += va.iter().zip(&vb).map(|(p, q)| (p / na - q / nb).powi(2)).sum::<f64>();
                }
            }
            inner += d / (s.h * s.w) as f64;
        }
        outer += inner / (s.n - 1) as f64;
    }
    outer / sets.len() as f64
}

#[test]
fn feature_diversity_cases() {
    let one = batch(6, 1);
    let same = ImageTensor::stack(&[one.clone(), one.clone(), one]).unwrap();
    assert_eq!(pairwise_feature_diversity(&MeanExtractor, &[same]).unwrap(), 0.0);
    let sets: Vec<_> = (0..4).map(|i| batch(10 + i, 5)).collect();
    let got = pairwise_feature_diversity(&MeanExtractor, &sets).unwrap();
    assert!((got - oracle_diversity(&sets)).abs() < 1e-6);
    let reversed: Vec<_> = sets
        .iter()
        .map(|s| ImageTensor::stack(&(0..5).rev().map(|i| s.item(i)).collect::<Vec<_>>()).unwrap())
        .collect();
    assert!((pairwise_feature_diversity(&MeanExtractor, &reversed).unwrap() - got).abs() < 1e-12);
    assert!(pairwise_feature_diversity(&MeanExtractor, &[batch(1, 1)]).is_err());
}

#[test]
fn fid_of_identical_sets_is_zero() {
    let a = batch(20, 30);
    assert!(feature_fid(&MeanExtractor, &a, &a).unwrap().abs() < 1e-8);
    assert!(feature_fid(&MeanExtractor, &a, &batch(21, 30)).unwrap() > 0.0);
}

#[test]
fn small_classifier_learns_colors() {
    let mut rng = RandomSource::seed_from_u64(30);
    let n = 90;
    let mut imgs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let k = i % 3;
        let mut t = ImageTensor::<f32>::randn(Shape4::new(1, 3, 8, 8), &mut rng).map(|v| 0.3 * v);
        for y in 0..8 {
            for x in 0..8 {
                let v = t.at(0, k, y, x) + 0.8;
                t.set(0, k, y, x, v);
            }
        }
        imgs.push(t);
        labels.push(k);
    }
    let imgs = ImageTensor::stack(&imgs).unwrap();
    let mut clf = SmallClassifier::<f32>::new(ClassifierConfig::default(), &mut rng).unwrap();
    let recipe = ClassifierTraining { steps: 150, batch_size: 16, learning_rate: 3e-3 };
    clf.train(&imgs, &labels, &recipe, &mut rng).unwrap();
    assert!(classification_accuracy(&clf, &imgs, &labels).unwrap() > 0.95);
    let f = clf.extract(&imgs).unwrap();
    assert_eq!(f.maps.len(), 3);
    assert_eq!((f.maps[1].c, f.maps[1].h), (32, 4));
    assert_eq!(f.embedding.len(), n * clf.feature_dim());
    let again = SmallClassifier::from_params(clf.config().clone(), clf.params.clone()).unwrap();
    assert_eq!(again.extract(&imgs).unwrap(), f);
}
