#[cfg(not(feature = "std"))]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::Real;

const EPS: f64 = 1e-5;

/// Group normalization; returns the output and per-(item, group)
/// `(mean, 1/std)`.
#[allow(clippy::too_many_arguments)]
pub(super) fn forward<T: Real>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    n: usize,
    c: usize,
    hw: usize,
    groups: usize,
) -> (Vec<T>, Vec<(T, T)>) {
    let cpg = c / groups;
    let glen = cpg * hw;
    let mut out = vec![T::zero(); x.len()];
    let mut stats = Vec::with_capacity(n * groups);
    for i in 0..n {
        for g in 0..groups {
            let start = (i * c + g * cpg) * hw;
            let xs = &x[start..start + glen];
            let mean = xs.iter().map(|v| v.as_f64()).sum::<f64>() / glen as f64;
            let var = xs.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / glen as f64;
            let rstd = 1.0 / (var + EPS).sqrt();
            let (m, r) = (T::lit(mean), T::lit(rstd));
            stats.push((m, r));
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let (ga, be) = (gamma[ch], beta[ch]);
                let off = start + cc * hw;
                for j in off..off + hw {
                    out[j] = (x[j] - m) * r * ga + be;
                }
            }
        }
    }
    (out, stats)
}

/// Returns `(dx, dgamma, dbeta)`.
#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Real>(
    x: &[T],
    gamma: &[T],
    dy: &[T],
    stats: &[(T, T)],
    n: usize,
    c: usize,
    hw: usize,
    groups: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let cpg = c / groups;
    let glen = cpg * hw;
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let inv_len = T::lit(1.0 / glen as f64);
    for i in 0..n {
        for g in 0..groups {
            let (m, r) = stats[i * groups + g];
            let start = (i * c + g * cpg) * hw;
            let mut sum_dxhat = T::zero();
            let mut sum_dxhat_xhat = T::zero();
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let off = start + cc * hw;
                for j in off..off + hw {
                    let xhat = (x[j] - m) * r;
                    dgamma[ch] += dy[j] * xhat;
                    dbeta[ch] += dy[j];
                    let dxhat = dy[j] * gamma[ch];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
            }
            let mean_dxhat = sum_dxhat * inv_len;
            let mean_dxhat_xhat = sum_dxhat_xhat * inv_len;
            for cc in 0..cpg {
                let ch = g * cpg + cc;
                let off = start + cc * hw;
                for j in off..off + hw {
                    let xhat = (x[j] - m) * r;
                    let dxhat = dy[j] * gamma[ch];
                    dx[j] = r * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
