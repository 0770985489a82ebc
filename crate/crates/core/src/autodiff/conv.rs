use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::Real;

/// Border handling for "same" convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Padding {
    #[default]
    Zero,
    Circular,
}

pub(super) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Source coordinate for output position `o` shifted by `d`, or `None`
    /// when it falls in zero padding.
    #[inline]
    fn source(&self, o: usize, d: isize, len: usize) -> Option<usize> {
        let s = o as isize + d;
        if s >= 0 && (s as usize) < len {
            Some(s as usize)
        } else {
            match self.padding {
                Padding::Zero => None,
                Padding::Circular => Some(s.rem_euclid(len as isize) as usize),
            }
        }
    }

    fn offset(&self, tap: usize) -> isize {
        let half = (self.k / 2) as isize;
        (tap as isize - half) * self.dilation as isize
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (h, w, k) = (self.h, self.w, self.k);
        for c in 0..self.c {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let dy = self.offset(ky);
                for kx in 0..k {
                    let dx = self.offset(kx);
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * h * w..(row + 1) * h * w];
                    for y in 0..h {
                        let out = &mut dst[y * w..(y + 1) * w];
                        match self.source(y, dy, h) {
                            None => out.fill(T::zero()),
                            Some(sy) => {
                                let src = &plane[sy * w..(sy + 1) * w];
                                for (xo, o) in out.iter_mut().enumerate() {
                                    *o = match self.source(xo, dx, w) {
                                        Some(sx) => src[sx],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let (h, w, k) = (self.h, self.w, self.k);
        for c in 0..self.c {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let dy = self.offset(ky);
                for kx in 0..k {
                    let dxo = self.offset(kx);
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * h * w..(row + 1) * h * w];
                    for y in 0..h {
                        let Some(sy) = self.source(y, dy, h) else { continue };
                        for xo in 0..w {
                            if let Some(sx) = self.source(xo, dxo, w) {
                                plane[sy * w + sx] += src[y * w + xo];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn forward<T: Real>(g: &Geometry, n: usize, o: usize, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let (rows, hw) = (g.rows(), g.plane());
    let mut out = vec![T::zero(); n * o * hw];
    let mut cols = if g.k == 1 { Vec::new() } else { vec![T::zero(); rows * hw] };
    for i in 0..n {
        let xi = &x[i * g.c * hw..(i + 1) * g.c * hw];
        let oi = &mut out[i * o * hw..(i + 1) * o * hw];
        if let Some(b) = b {
            for (ch, plane) in oi.chunks_mut(hw).enumerate() {
                plane.fill(b[ch]);
            }
        }
        let src = if g.k == 1 {
            xi
        } else {
            g.im2col(xi, &mut cols);
            &cols[..]
        };
        T::gemm(o, rows, hw, T::one(), w, false, src, false, T::one(), oi);
    }
    out
}

/// Returns `(dx, dw, db)`.
pub(super) fn backward<T: Real>(
    g: &Geometry,
    n: usize,
    o: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (rows, hw) = (g.rows(), g.plane());
    let mut dx = vec![T::zero(); n * g.c * hw];
    let mut dw = vec![T::zero(); o * rows];
    let mut db = vec![T::zero(); o];
    let mut cols = if g.k == 1 { Vec::new() } else { vec![T::zero(); rows * hw] };
    let mut dcols = vec![T::zero(); rows * hw];
    for i in 0..n {
        let xi = &x[i * g.c * hw..(i + 1) * g.c * hw];
        let gi = &dy[i * o * hw..(i + 1) * o * hw];
        for (ch, plane) in gi.chunks(hw).enumerate() {
            db[ch] += plane.iter().copied().sum::<T>();
        }
        let src = if g.k == 1 {
            xi
        } else {
            g.im2col(xi, &mut cols);
            &cols[..]
        };
        T::gemm(o, hw, rows, T::one(), gi, false, src, true, T::one(), &mut dw);
        let dxi = &mut dx[i * g.c * hw..(i + 1) * g.c * hw];
        if g.k == 1 {
            T::gemm(rows, o, hw, T::one(), w, true, gi, false, T::one(), dxi);
        } else {
            T::gemm(rows, o, hw, T::one(), w, true, gi, false, T::zero(), &mut dcols);
            g.col2im(&dcols, dxi);
        }
    }
    (dx, dw, db)
}
