use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

/// Eigen-decomposition of a symmetric row-major `d x d` matrix by cyclic
/// Jacobi rotations. Returns `(eigenvalues, eigenvectors)` with eigenvector
/// `k` stored in column `k`.
pub fn symmetric_eigen(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), d * d);
    let mut m = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let norm: f64 = m.iter().map(|x| x * x).sum::<f64>();
    let tol = 1e-30 * norm.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * d + j] * m[i * d + j]).sum();
        if off <= tol {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (m[p * d + p], m[q * d + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + Float::sqrt(theta * theta + 1.0));
                let c = 1.0 / Float::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..d {
                    let (mkp, mkq) = (m[k * d + p], m[k * d + q]);
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let (mpk, mqk) = (m[p * d + k], m[q * d + k]);
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..d).map(|i| m[i * d + i]).collect(), v)
}

/// `V diag(f(lambda)) V^T`.
pub fn reconstruct(values: &[f64], vectors: &[f64], d: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let fl: Vec<f64> = values.iter().map(|&l| f(l)).collect();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| vectors[i * d + k] * fl[k] * vectors[j * d + k]).sum();
        }
    }
    out
}

pub fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RandomSource;

    #[test]
    fn eigen_reconstructs_random_symmetric() {
        let mut rng = RandomSource::seed_from_u64(1);
        let d = 7;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let v = rng.normal();
                a[i * d + j] = v;
                a[j * d + i] = v;
            }
        }
        let (l, v) = symmetric_eigen(&a, d);
        let r = reconstruct(&l, &v, d, |x| x);
        for (x, y) in a.iter().zip(&r) {
            assert!((x - y).abs() < 1e-10);
        }
        // Orthonormal eigenvectors.
        let vt: Vec<f64> = (0..d * d).map(|k| v[(k % d) * d + k / d]).collect();
        let id = matmul(&vt, &v, d);
        for i in 0..d {
            for j in 0..d {
                assert!((id[i * d + j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }
}
