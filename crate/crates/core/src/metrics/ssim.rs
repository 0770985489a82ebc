use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, ImageTensor, Real, Result};

/// Weights of the standard five-scale pyramid, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    /// Side of the square Gaussian window.
    pub window: usize,
    pub sigma: f64,
    /// Per-scale exponents, finest first. Fewer scales are used when the
    /// image is too small; the leading weights are then renormalized.
    pub weights: Vec<f64>,
    /// Dynamic range of pixel values.
    pub data_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, weights: MS_SSIM_WEIGHTS.to_vec(), data_range: 2.0, k1: 0.01, k2: 0.03 }
    }
}

impl SsimConfig {
    /// Plain single-scale SSIM.
    pub fn single_scale(window: usize, sigma: f64) -> Self {
        Self { window, sigma, weights: vec![1.0], ..Self::default() }
    }

    /// Number of scales usable on an `h x w` image.
    pub fn scales_for(&self, h: usize, w: usize) -> usize {
        let mut s = 0;
        let (mut hh, mut ww) = (h, w);
        while s < self.weights.len() && hh >= self.window && ww >= self.window {
            s += 1;
            hh /= 2;
            ww /= 2;
        }
        s
    }

    fn kernel(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..self.window)
            .map(|i| Float::exp(-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)))
            .collect();
        let z: f64 = g.iter().sum();
        g.into_iter().map(|v| v / z).collect()
    }
}

/// Separable "valid" Gaussian filter of an `h x w` plane.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean luminance-contrast-structure product and mean contrast-structure
/// term of one plane pair.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize, cfg: &SsimConfig, k: &[f64]) -> (f64, f64) {
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let (mu_a, _, _) = filter(a, h, w, k);
    let (mu_b, _, _) = filter(b, h, w, k);
    let (saa, _, _) = filter(&prod(&|x, _| x * x), h, w, k);
    let (sbb, _, _) = filter(&prod(&|_, y| y * y), h, w, k);
    let (sab, _, _) = filter(&prod(&|x, y| x * y), h, w, k);
    let m = mu_a.len() as f64;
    let (mut full, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = saa[i] - ma * ma;
        let vb = sbb[i] - mb * mb;
        let cov = sab[i] - ma * mb;
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let c = (2.0 * cov + c2) / (va + vb + c2);
        full += l * c;
        cs += c;
    }
    (full / m, cs / m)
}

fn downsample(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = 0.25
                * (plane[2 * y * w + 2 * x]
                    + plane[2 * y * w + 2 * x + 1]
                    + plane[(2 * y + 1) * w + 2 * x]
                    + plane[(2 * y + 1) * w + 2 * x + 1]);
        }
    }
    (out, oh, ow)
}

/// Weighted geometric mean that tolerates negative terms: the magnitude is
/// `prod |v_j|^w_j` and the sign is that of `sum w_j sign(v_j)`.
fn signed_product(values: &[f64], weights: &[f64]) -> f64 {
    let mag: f64 = values.iter().zip(weights).map(|(v, w)| Float::powf(v.abs(), *w)).product();
    let vote: f64 = values.iter().zip(weights).map(|(v, w)| if *v < 0.0 { -w } else { *w }).sum();
    if vote < 0.0 {
        -mag
    } else {
        mag
    }
}

fn msssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, cfg: &SsimConfig, scales: usize, k: &[f64]) -> f64 {
    let wsum: f64 = cfg.weights[..scales].iter().sum();
    let weights: Vec<f64> = cfg.weights[..scales].iter().map(|x| x / wsum).collect();
    let mut terms = Vec::with_capacity(scales);
    let (mut pa, mut pb, mut hh, mut ww) = (a.to_vec(), b.to_vec(), h, w);
    for s in 0..scales {
        let (full, cs) = ssim_terms(&pa, &pb, hh, ww, cfg, k);
        terms.push(if s + 1 == scales { full } else { cs });
        if s + 1 < scales {
            let (na, nh, nw) = downsample(&pa, hh, ww);
            pb = downsample(&pb, hh, ww).0;
            pa = na;
            hh = nh;
            ww = nw;
        }
    }
    signed_product(&terms, &weights)
}

/// Multi-scale SSIM of batch item `ia` of `a` against item `ib` of `b`,
/// averaged over channels.
pub fn ms_ssim_items<T: Real>(a: &ImageTensor<T>, ia: usize, b: &ImageTensor<T>, ib: usize, cfg: &SsimConfig) -> Result<f64> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.with_n(1) != sb.with_n(1) {
        return Err(Error::shape(sa.with_n(1), sb.with_n(1)));
    }
    let scales = cfg.scales_for(sa.h, sa.w);
    if scales == 0 {
        return Err(Error::InvalidShape(alloc::format!(
            "image {}x{} smaller than the {}-pixel SSIM window",
            sa.h,
            sa.w,
            cfg.window
        )));
    }
    let k = cfg.kernel();
    let plane = sa.h * sa.w;
    let mut total = 0.0;
    for c in 0..sa.c {
        let off_a = (ia * sa.c + c) * plane;
        let off_b = (ib * sb.c + c) * plane;
        let pa: Vec<f64> = a.data()[off_a..off_a + plane].iter().map(|v| v.as_f64()).collect();
        let pb: Vec<f64> = b.data()[off_b..off_b + plane].iter().map(|v| v.as_f64()).collect();
        total += msssim_plane(&pa, &pb, sa.h, sa.w, cfg, scales, &k);
    }
    Ok(total / sa.c as f64)
}

/// MS-SSIM between single-item tensors.
pub fn ms_ssim<T: Real>(a: &ImageTensor<T>, b: &ImageTensor<T>, cfg: &SsimConfig) -> Result<f64> {
    ms_ssim_items(a, 0, b, 0, cfg)
}

/// For each input's `[k, c, h, w]` sample set, MS-SSIM of the first sample
/// against each of the others, pooled across inputs.
pub fn pairwise_msssim_diversity<T: Real>(samples: &[ImageTensor<T>], cfg: &SsimConfig) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for set in samples {
        let k = set.shape().n;
        if k < 2 {
            return Err(Error::InvalidArgument(alloc::format!("need at least 2 samples per input, got {k}")));
        }
        for j in 1..k {
            out.push(ms_ssim_items(set, 0, set, j, cfg)?);
        }
    }
    Ok(out)
}
