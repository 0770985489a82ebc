use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::linalg::{matmul, reconstruct, symmetric_eigen};
use crate::{Error, Result};

/// Mean and unbiased covariance of a set of feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub cov: Vec<f64>,
    pub n: usize,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_moments(mean: Vec<f64>, cov: Vec<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::shape(d * d, cov.len()));
        }
        for i in 0..d {
            for j in 0..i {
                if (cov[i * d + j] - cov[j * d + i]).abs() > 1e-10 {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
            }
        }
        Ok(Self { mean, cov, n })
    }

    /// Stats of `n` row-major feature vectors of width `d`.
    pub fn from_rows(rows: &[f64], d: usize) -> Result<Self> {
        let mut acc = StatsAccumulator::new(d);
        acc.push_rows(rows)?;
        acc.finish()
    }
}

/// Streaming mean/covariance with an exact parallel merge.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    d: usize,
    n: usize,
    mean: Vec<f64>,
    /// Sum of outer products of deviations from the running mean.
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(d: usize) -> Self {
        Self { d, n: 0, mean: vec![0.0; d], m2: vec![0.0; d * d] }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::shape(self.d, x.len()));
        }
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * inv;
        }
        let d = self.d;
        for i in 0..d {
            let after = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[i * d + j] += after * delta[j];
            }
        }
        Ok(())
    }

    pub fn push_rows(&mut self, rows: &[f64]) -> Result<()> {
        if self.d == 0 || rows.len() % self.d != 0 {
            return Err(Error::shape(self.d, rows.len()));
        }
        rows.chunks(self.d).try_for_each(|r| self.push(r))
    }

    /// Combines two partial accumulators as if all vectors had been pushed
    /// into one.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.d != self.d {
            return Err(Error::shape(self.d, other.d));
        }
        if other.n == 0 {
            return Ok(());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let d = self.d;
        for i in 0..d {
            for j in 0..d {
                self.m2[i * d + j] += other.m2[i * d + j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nb / n;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn finish(&self) -> Result<FeatureStats> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(alloc::format!("need at least 2 samples, got {}", self.n)));
        }
        let d = self.d;
        let inv = 1.0 / (self.n - 1) as f64;
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let v = 0.5 * (self.m2[i * d + j] + self.m2[j * d + i]) * inv;
                cov[i * d + j] = v;
            }
        }
        Ok(FeatureStats { mean: self.mean.clone(), cov, n: self.n })
    }
}

/// Eigenvalues below this (relative to the largest magnitude) are an error;
/// smaller negative values are rounding noise and are clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

fn checked_eigen(m: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut l, v) = symmetric_eigen(m, d);
    let scale = l.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    for x in l.iter_mut() {
        if *x < -PSD_TOLERANCE * scale {
            return Err(Error::NotPositiveSemidefinite { eigenvalue: *x });
        }
        *x = x.max(0.0);
    }
    Ok((l, v))
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`. The trace of the
/// square root is taken through the symmetric product
/// `S_a^(1/2) S_b S_a^(1/2)`, which has the same eigenvalues.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::shape(d, b.dim()));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let (la, va) = checked_eigen(&a.cov, d)?;
    checked_eigen(&b.cov, d)?;
    let root_a = reconstruct(&la, &va, d, Float::sqrt);
    let mut inner = matmul(&matmul(&root_a, &b.cov, d), &root_a, d);
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            inner[i * d + j] = s;
            inner[j * d + i] = s;
        }
    }
    let (li, _) = checked_eigen(&inner, d)?;
    let tr_root: f64 = li.iter().map(|&l| Float::sqrt(l)).sum();
    let tr_a: f64 = (0..d).map(|i| a.cov[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| b.cov[i * d + i]).sum();
    Ok((mean_term + tr_a + tr_b - 2.0 * tr_root).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RandomSource;

    fn uni(mean: f64, var: f64) -> FeatureStats {
        FeatureStats::from_moments(vec![mean], vec![var], 100).unwrap()
    }

    #[test]
    fn univariate_closed_forms() {
        assert!((frechet_distance(&uni(0.0, 1.0), &uni(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((frechet_distance(&uni(0.0, 1.0), &uni(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((frechet_distance(&uni(2.0, 9.0), &uni(-1.0, 0.25)).unwrap() - (9.0 + 6.25)).abs() < 1e-12);
    }

    fn random_stats(seed: u64, d: usize, n: usize) -> (FeatureStats, Vec<f64>) {
        let mut rng = RandomSource::seed_from_u64(seed);
        let rows: Vec<f64> = (0..n * d).map(|i| rng.normal() * (1.0 + (i % d) as f64) + (i % 3) as f64).collect();
        (FeatureStats::from_rows(&rows, d).unwrap(), rows)
    }

    #[test]
    fn self_distance_zero_and_symmetric() {
        let (a, _) = random_stats(1, 6, 50);
        let (b, _) = random_stats(2, 6, 80);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-8);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-9 * ab.max(1.0));
    }

    /// Diagonal covariances commute, so the root is elementwise.
    #[test]
    fn diagonal_case_matches_elementwise_formula() {
        let a = FeatureStats::from_moments(vec![1.0, 0.0, 2.0], vec![4.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.25], 10).unwrap();
        let b = FeatureStats::from_moments(vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 0.25], 10).unwrap();
        let expect = 1.0 + 4.0 + (2.0f64 - 1.0).powi(2) + (1.0f64 - 3.0).powi(2) + 0.0;
        assert!((frechet_distance(&a, &b).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn covariance_matches_two_pass_oracle() {
        let d = 4;
        let (s, rows) = random_stats(3, d, 37);
        let n = 37.0;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().skip(j).step_by(d).sum::<f64>() / n).collect();
        for i in 0..d {
            for j in 0..d {
                let c: f64 = rows.chunks(d).map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0);
                assert!((s.cov[i * d + j] - c).abs() < 1e-10);
            }
            assert!((s.mean[i] - mean[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_equals_single_pass() {
        let d = 3;
        let (_, rows) = random_stats(4, d, 40);
        let mut whole = StatsAccumulator::new(d);
        whole.push_rows(&rows).unwrap();
        let mut a = StatsAccumulator::new(d);
        let mut b = StatsAccumulator::new(d);
        a.push_rows(&rows[..13 * d]).unwrap();
        b.push_rows(&rows[13 * d..]).unwrap();
        a.merge(&b).unwrap();
        let (x, y) = (whole.finish().unwrap(), a.finish().unwrap());
        assert_eq!(x.n, y.n);
        for (p, q) in x.cov.iter().zip(&y.cov).chain(x.mean.iter().zip(&y.mean)) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn errors() {
        assert!(frechet_distance(&uni(0.0, 1.0), &random_stats(1, 2, 5).0).is_err());
        assert!(matches!(
            frechet_distance(&uni(0.0, -1.0), &uni(0.0, 1.0)),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        assert!(StatsAccumulator::new(2).finish().is_err());
        assert!(FeatureStats::from_moments(vec![0.0, 0.0], vec![1.0, 0.5, 0.4, 1.0], 3).is_err());
    }
}
