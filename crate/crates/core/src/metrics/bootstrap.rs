#[cfg(not(feature = "std"))]
use num_traits::Float;
use alloc::vec::Vec;

use crate::{Error, RandomSource, Result};

/// Percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn excludes(&self, value: f64) -> bool {
        value < self.lo || value > self.hi
    }
}

/// Resamples `units` indices with replacement and evaluates `stat` on each
/// resample. `stat` receives the chosen unit indices.
pub fn bootstrap_ci(
    units: usize,
    stat: impl Fn(&[usize]) -> f64,
    resamples: usize,
    level: f64,
    rng: &mut RandomSource,
) -> Result<Interval> {
    if units == 0 || resamples < 2 || !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument("bootstrap needs units, >= 2 resamples and level in (0, 1)".into()));
    }
    let all: Vec<usize> = (0..units).collect();
    let estimate = stat(&all);
    let mut idx = alloc::vec![0usize; units];
    let draws: Vec<f64> = (0..resamples)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = rng.below(units));
            stat(&idx)
        })
        .collect();
    Ok(percentile_interval(estimate, draws, level))
}

fn percentile_interval(estimate: f64, mut draws: Vec<f64>, level: f64) -> Interval {
    draws.sort_by(f64::total_cmp);
    let last = (draws.len() - 1) as f64;
    let q = |p: f64| {
        let pos = p * last;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        draws[lo] + (draws[hi] - draws[lo]) * (pos - lo as f64)
    };
    let alpha = (1.0 - level) / 2.0;
    Interval { estimate, lo: q(alpha), hi: q(1.0 - alpha) }
}

/// Interval for `mean(a) - mean(b)` with `a` and `b` resampled
/// independently.
pub fn mean_difference_ci(a: &[f64], b: &[f64], resamples: usize, level: f64, rng: &mut RandomSource) -> Result<Interval> {
    if a.is_empty() || b.is_empty() || resamples < 2 || !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument("mean difference needs two non-empty samples".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let estimate = mean(a) - mean(b);
    let draws: Vec<f64> = (0..resamples)
        .map(|_| {
            let ma = (0..a.len()).map(|_| a[rng.below(a.len())]).sum::<f64>() / a.len() as f64;
            let mb = (0..b.len()).map(|_| b[rng.below(b.len())]).sum::<f64>() / b.len() as f64;
            ma - mb
        })
        .collect();
    Ok(percentile_interval(estimate, draws, level))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_covers_and_separates() {
        let mut rng = RandomSource::seed_from_u64(1);
        let a: Vec<f64> = (0..400).map(|_| rng.normal() + 0.5).collect();
        let b: Vec<f64> = (0..400).map(|_| rng.normal()).collect();
        let d = mean_difference_ci(&a, &b, 2000, 0.95, &mut rng).unwrap();
        assert!(d.lo < d.estimate && d.estimate < d.hi);
        assert!(d.excludes(0.0));
        let same = bootstrap_ci(400, |idx| idx.iter().map(|&i| b[i]).sum::<f64>() / idx.len() as f64, 2000, 0.95, &mut rng).unwrap();
        assert!(!same.excludes(0.0), "{same:?}");
        assert!(bootstrap_ci(0, |_| 0.0, 10, 0.95, &mut rng).is_err());
    }
}
