use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, RandomSource, Real, Result};

/// `(batch, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn with_n(self, n: usize) -> Self {
        Self { n, ..self }
    }

    pub fn with_w(self, w: usize) -> Self {
        Self { w, ..self }
    }

    pub fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

/// Dense NCHW image batch. Pixel data is expected in `[-1, 1]`, though
/// intermediate diffusion states can leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Real> ImageTensor<T> {
    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::InvalidShape(alloc::format!("zero-sized dim in {shape:?}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(shape.len(), data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Shape4, value: T) -> Self {
        assert!(!shape.is_empty(), "zero-sized image tensor");
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape4) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn ones(shape: Shape4) -> Self {
        Self::filled(shape, T::one())
    }

    pub fn randn(shape: Shape4, rng: &mut RandomSource) -> Self {
        let data = (0..shape.len()).map(|_| T::lit(rng.normal())).collect();
        Self::from_vec(shape, data).expect("shape checked")
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(())
    }

    /// Batch item `i` as a single-image tensor.
    pub fn item(&self, i: usize) -> Self {
        let len = self.shape.item();
        Self {
            shape: self.shape.with_n(1),
            data: self.data[i * len..(i + 1) * len].to_vec(),
        }
    }

    /// Batch items `start..end` as a new tensor.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        assert!(start < end && end <= self.shape.n, "item range {start}..{end}");
        let len = self.shape.item();
        Self {
            shape: self.shape.with_n(end - start),
            data: self.data[start * len..end * len].to_vec(),
        }
    }

    /// Stacks images along the batch axis. All inputs must agree on `(c, h, w)`.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of zero tensors".into()))?;
        let per = first.shape.with_n(1);
        let mut data = Vec::with_capacity(per.len() * items.len());
        let mut n = 0;
        for it in items {
            if it.shape.with_n(1) != per {
                return Err(Error::shape(per, it.shape));
            }
            n += it.shape.n;
            data.extend_from_slice(&it.data);
        }
        Self::from_vec(per.with_n(n), data)
    }

    /// Repeats each batch item `times` times consecutively.
    pub fn repeat_items(&self, times: usize) -> Self {
        let len = self.shape.item();
        let mut data = Vec::with_capacity(self.data.len() * times);
        for chunk in self.data.chunks(len) {
            for _ in 0..times {
                data.extend_from_slice(chunk);
            }
        }
        Self {
            shape: self.shape.with_n(self.shape.n * times),
            data,
        }
    }

    /// Columns `x0..x0 + width` of every row.
    pub fn crop_columns(&self, x0: usize, width: usize) -> Result<Self> {
        let s = self.shape;
        if width == 0 || x0 + width > s.w {
            return Err(Error::InvalidArgument(alloc::format!(
                "column window {x0}+{width} outside width {}",
                s.w
            )));
        }
        let mut data = Vec::with_capacity(s.n * s.c * s.h * width);
        for row in self.data.chunks(s.w) {
            data.extend_from_slice(&row[x0..x0 + width]);
        }
        Self::from_vec(Shape4 { w: width, ..s }, data)
    }

    /// Horizontal concatenation `[left | right]`.
    pub fn concat_columns(left: &Self, right: &Self) -> Result<Self> {
        let (a, b) = (left.shape, right.shape);
        if a.n != b.n || a.c != b.c || a.h != b.h {
            return Err(Error::shape(a, b));
        }
        let mut data = Vec::with_capacity(left.data.len() + right.data.len());
        for (ra, rb) in left.data.chunks(a.w).zip(right.data.chunks(b.w)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        Self::from_vec(Shape4 { w: a.w + b.w, ..a }, data)
    }

    pub fn cast<U: Real>(&self) -> ImageTensor<U> {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn mean_abs_diff(&self, other: &Self) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .sum();
        Ok(s / self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_zero_dims() {
        assert!(ImageTensor::<f32>::from_vec(Shape4::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(ImageTensor::<f32>::from_vec(Shape4::new(0, 1, 2, 2), vec![]).is_err());
    }

    #[test]
    fn column_crop_and_concat_invert() {
        let s = Shape4::new(2, 3, 4, 6);
        let t = ImageTensor::<f32>::from_vec(s, (0..s.len()).map(|v| v as f32).collect()).unwrap();
        let l = t.crop_columns(0, 2).unwrap();
        let r = t.crop_columns(2, 4).unwrap();
        assert_eq!(ImageTensor::concat_columns(&l, &r).unwrap(), t);
        assert_eq!(r.at(1, 2, 3, 0), t.at(1, 2, 3, 2));
    }
}
