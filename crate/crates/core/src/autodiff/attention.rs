#[cfg(not(feature = "std"))]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::Real;

/// Spatial positions (row-major indices) that attend to each other. Global
/// attention is a single group; local attention splits the map into four
/// non-overlapping quadrants.
pub fn attention_groups(h: usize, w: usize, local: bool) -> Vec<Vec<usize>> {
    if !local {
        return vec![(0..h * w).collect()];
    }
    assert!(h % 2 == 0 && w % 2 == 0, "local attention needs even spatial dims, got {h}x{w}");
    let (bh, bw) = (h / 2, w / 2);
    let mut groups = Vec::with_capacity(4);
    for qy in 0..2 {
        for qx in 0..2 {
            let mut g = Vec::with_capacity(bh * bw);
            for y in qy * bh..(qy + 1) * bh {
                for x in qx * bw..(qx + 1) * bw {
                    g.push(y * w + x);
                }
            }
            groups.push(g);
        }
    }
    groups
}

fn gather<T: Real>(src: &[T], c: usize, hw: usize, idx: &[usize], dst: &mut [T]) {
    let m = idx.len();
    for ch in 0..c {
        let plane = &src[ch * hw..(ch + 1) * hw];
        for (j, &p) in idx.iter().enumerate() {
            dst[ch * m + j] = plane[p];
        }
    }
}

fn scatter_add<T: Real>(src: &[T], c: usize, hw: usize, idx: &[usize], dst: &mut [T]) {
    let m = idx.len();
    for ch in 0..c {
        let plane = &mut dst[ch * hw..(ch + 1) * hw];
        for (j, &p) in idx.iter().enumerate() {
            plane[p] += src[ch * m + j];
        }
    }
}

fn softmax_rows<T: Real>(s: &mut [T], m: usize) {
    for row in s.chunks_mut(m) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
}

/// Attention weights for one batch item (`q`, `k` are `[c, h*w]`), one
/// row-major `m x m` matrix per group.
pub fn attention_probs<T: Real>(q: &[T], k: &[T], c: usize, h: usize, w: usize, local: bool) -> Vec<Vec<T>> {
    let hw = h * w;
    let scale = T::lit(1.0 / (c as f64).sqrt());
    attention_groups(h, w, local)
        .iter()
        .map(|idx| {
            let m = idx.len();
            let mut qg = vec![T::zero(); c * m];
            let mut kg = vec![T::zero(); c * m];
            gather(q, c, hw, idx, &mut qg);
            gather(k, c, hw, idx, &mut kg);
            let mut s = vec![T::zero(); m * m];
            T::gemm(m, c, m, scale, &qg, true, &kg, false, T::zero(), &mut s);
            softmax_rows(&mut s, m);
            s
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(super) fn forward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    local: bool,
) -> (Vec<T>, Vec<Vec<T>>) {
    let hw = h * w;
    let item = c * hw;
    let groups = attention_groups(h, w, local);
    let mut out = vec![T::zero(); n * item];
    let mut all_probs = Vec::with_capacity(n * groups.len());
    for i in 0..n {
        let (qi, ki, vi) = (&q[i * item..(i + 1) * item], &k[i * item..(i + 1) * item], &v[i * item..(i + 1) * item]);
        let probs = attention_probs(qi, ki, c, h, w, local);
        let oi = &mut out[i * item..(i + 1) * item];
        for (idx, p) in groups.iter().zip(&probs) {
            let m = idx.len();
            let mut vg = vec![T::zero(); c * m];
            gather(vi, c, hw, idx, &mut vg);
            let mut og = vec![T::zero(); c * m];
            T::gemm(c, m, m, T::one(), &vg, false, p, true, T::zero(), &mut og);
            scatter_add(&og, c, hw, idx, oi);
        }
        all_probs.extend(probs);
    }
    (out, all_probs)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    dout: &[T],
    probs: &[Vec<T>],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    local: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hw = h * w;
    let item = c * hw;
    let groups = attention_groups(h, w, local);
    let scale = T::lit(1.0 / (c as f64).sqrt());
    let mut dq = vec![T::zero(); n * item];
    let mut dk = vec![T::zero(); n * item];
    let mut dv = vec![T::zero(); n * item];
    for i in 0..n {
        let r = i * item..(i + 1) * item;
        for (gi, idx) in groups.iter().enumerate() {
            let p = &probs[i * groups.len() + gi];
            let m = idx.len();
            let mut qg = vec![T::zero(); c * m];
            let mut kg = vec![T::zero(); c * m];
            let mut vg = vec![T::zero(); c * m];
            let mut dog = vec![T::zero(); c * m];
            gather(&q[r.clone()], c, hw, idx, &mut qg);
            gather(&k[r.clone()], c, hw, idx, &mut kg);
            gather(&v[r.clone()], c, hw, idx, &mut vg);
            gather(&dout[r.clone()], c, hw, idx, &mut dog);

            let mut dvg = vec![T::zero(); c * m];
            T::gemm(c, m, m, T::one(), &dog, false, p, false, T::zero(), &mut dvg);
            let mut dp = vec![T::zero(); m * m];
            T::gemm(m, c, m, T::one(), &dog, true, &vg, false, T::zero(), &mut dp);
            // softmax backward, then the 1/sqrt(c) score scale
            for (prow, drow) in p.chunks(m).zip(dp.chunks_mut(m)) {
                let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                for (d, &pv) in drow.iter_mut().zip(prow) {
                    *d = pv * (*d - dot) * scale;
                }
            }
            let mut dqg = vec![T::zero(); c * m];
            T::gemm(c, m, m, T::one(), &kg, false, &dp, true, T::zero(), &mut dqg);
            let mut dkg = vec![T::zero(); c * m];
            T::gemm(c, m, m, T::one(), &qg, false, &dp, false, T::zero(), &mut dkg);

            scatter_add(&dqg, c, hw, idx, &mut dq[r.clone()]);
            scatter_add(&dkg, c, hw, idx, &mut dk[r.clone()]);
            scatter_add(&dvg, c, hw, idx, &mut dv[r.clone()]);
        }
    }
    (dq, dk, dv)
}
