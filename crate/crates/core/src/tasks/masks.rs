use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, ImageTensor, RandomSource, Real, Result, Shape4};

/// Binary `h x w` mask; 1 marks pixels to generate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![0; h * w] }
    }

    pub fn ones(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![1; h * w] }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(h * w, data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(Self { h, w, data })
    }

    /// Reads a single-channel 0/1 tensor item.
    pub fn from_tensor<T: Real>(t: &ImageTensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::shape(Shape4::new(1, 1, s.h, s.w), s));
        }
        let data = t
            .data()
            .iter()
            .map(|&v| match v {
                v if v == T::zero() => Ok(0),
                v if v == T::one() => Ok(1),
                _ => Err(Error::InvalidArgument("mask values must be 0 or 1".into())),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(Self { h: s.h, w: s.w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.w + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn complement(&self) -> Self {
        Self { h: self.h, w: self.w, data: self.data.iter().map(|v| 1 - v).collect() }
    }

    /// `[1, 1, h, w]` tensor of 0/1 values.
    pub fn to_tensor<T: Real>(&self) -> ImageTensor<T> {
        let data = self.data.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect();
        ImageTensor::from_vec(Shape4::new(1, 1, self.h, self.w), data).expect("mask dims are positive")
    }

    fn fill_rect(&mut self, r: &Rect) {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                self.set(y, x, true);
            }
        }
    }
}

fn check_size(h: usize, w: usize) -> Result<()> {
    if h < 8 || w < 8 {
        return Err(Error::InvalidShape(alloc::format!("mask size {h}x{w} below 8x8")));
    }
    Ok(())
}

/// Free-form brush stroke parameters. Lengths and widths are fractions of
/// the smaller image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrushParams {
    pub min_strokes: usize,
    pub max_strokes: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub min_width: f64,
    pub max_width: f64,
    /// Brushes never get thinner than this many pixels.
    pub min_width_px: f64,
    pub max_segment_length: f64,
    /// Largest turning angle between segments, radians.
    pub max_angle: f64,
    /// Expected mean area fraction, measured over 10^4 masks at 64x64.
    pub target_band: (f64, f64),
}

impl Default for BrushParams {
    fn default() -> Self {
        Self {
            min_strokes: 1,
            max_strokes: 4,
            min_segments: 3,
            max_segments: 8,
            min_width: 0.05,
            max_width: 0.15,
            min_width_px: 1.0,
            max_segment_length: 0.4,
            max_angle: core::f64::consts::PI * 2.0 / 5.0,
            target_band: (0.13, 0.16),
        }
    }
}

impl BrushParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_strokes <= self.max_strokes
            && self.min_segments >= 1
            && self.min_segments <= self.max_segments
            && self.min_width >= 0.0
            && self.min_width <= self.max_width
            && self.max_segment_length >= 0.0
            && self.target_band.0 <= self.target_band.1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("inconsistent brush parameters".into()))
        }
    }
}

/// Marks every pixel whose center is within `radius` of segment `a -> b`.
fn stamp_segment(mask: &mut BinaryMask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let (h, w) = (mask.h as f64, mask.w as f64);
    let y0 = Float::floor(a.0.min(b.0) - radius).max(0.0) as usize;
    let y1 = (Float::ceil(a.0.max(b.0) + radius).min(h - 1.0)).max(0.0) as usize;
    let x0 = Float::floor(a.1.min(b.1) - radius).max(0.0) as usize;
    let x1 = (Float::ceil(a.1.max(b.1) + radius).min(w - 1.0)).max(0.0) as usize;
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let r2 = radius * radius;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let t = if len2 > 0.0 { (((py - a.0) * dy + (px - a.1) * dx) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (cy, cx) = (a.0 + t * dy - py, a.1 + t * dx - px);
            if cy * cy + cx * cx <= r2 {
                mask.set(y, x, true);
            }
        }
    }
}

/// Union of random polyline brush strokes. Each stroke starts at a uniform
/// point, turns by a random angle (alternating direction) before each
/// segment, and is drawn with a round brush of random width.
pub fn gen_freeform_mask(h: usize, w: usize, params: &BrushParams, rng: &mut RandomSource) -> Result<BinaryMask> {
    check_size(h, w)?;
    params.validate()?;
    let mut mask = BinaryMask::zeros(h, w);
    let side = h.min(w) as f64;
    let strokes = rng.int_inclusive(params.min_strokes, params.max_strokes);
    for _ in 0..strokes {
        let segments = rng.int_inclusive(params.min_segments, params.max_segments);
        let width = (rng.uniform_range(params.min_width, params.max_width) * side).max(params.min_width_px);
        let radius = width / 2.0;
        let mut p = (rng.uniform() * h as f64, rng.uniform() * w as f64);
        let mut heading = rng.uniform() * core::f64::consts::TAU;
        for i in 0..segments {
            let turn = rng.uniform() * params.max_angle;
            heading += if i % 2 == 0 { turn } else { -turn };
            let len = rng.uniform() * params.max_segment_length * side;
            let q = (
                (p.0 + len * Float::sin(heading)).clamp(0.0, h as f64),
                (p.1 + len * Float::cos(heading)).clamp(0.0, w as f64),
            );
            stamp_segment(&mut mask, p, q, radius);
            p = q;
        }
    }
    Ok(mask)
}

/// Axis-aligned rectangle in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RectMasks {
    pub mask: BinaryMask,
    pub rects: Vec<Rect>,
}

pub const RECT_AREA_BOUNDS: (f64, f64) = (0.10, 0.40);
pub const RECT_MAX_ATTEMPTS: usize = 1000;

/// One to five rectangles whose union covers between 10% and 40% of the
/// image, by rejection sampling. The count is drawn once, so it stays
/// uniform regardless of which counts reject more often.
pub fn gen_rect_masks(h: usize, w: usize, rng: &mut RandomSource) -> Result<RectMasks> {
    check_size(h, w)?;
    let count = rng.int_inclusive(1, 5);
    let (lo, hi) = RECT_AREA_BOUNDS;
    for _ in 0..RECT_MAX_ATTEMPTS {
        let mut mask = BinaryMask::zeros(h, w);
        let mut rects = Vec::with_capacity(count);
        for _ in 0..count {
            let rh = rng.int_inclusive((h / 8).max(1), (h * 3 / 5).max(1));
            let rw = rng.int_inclusive((w / 8).max(1), (w * 3 / 5).max(1));
            let r = Rect { y: rng.below(h - rh + 1), x: rng.below(w - rw + 1), h: rh, w: rw };
            mask.fill_rect(&r);
            rects.push(r);
        }
        let a = mask.area_fraction();
        if (lo..=hi).contains(&a) {
            return Ok(RectMasks { mask, rects });
        }
    }
    Err(Error::RejectionLimit { attempts: RECT_MAX_ATTEMPTS, what: "rectangle masks" })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Top, Side::Bottom];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncropMode {
    OneSide,
    AllSides,
}

/// Half of the image along `side`. Requires even dims.
pub fn uncrop_side_mask(h: usize, w: usize, side: Side) -> Result<BinaryMask> {
    if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidShape(alloc::format!("uncropping needs even dims, got {h}x{w}")));
    }
    let mut m = BinaryMask::zeros(h, w);
    let r = match side {
        Side::Left => Rect { y: 0, x: 0, h, w: w / 2 },
        Side::Right => Rect { y: 0, x: w / 2, h, w: w / 2 },
        Side::Top => Rect { y: 0, x: 0, h: h / 2, w },
        Side::Bottom => Rect { y: h / 2, x: 0, h: h / 2, w },
    };
    m.fill_rect(&r);
    Ok(m)
}

/// Vertical and horizontal border widths `(bv, bh)` so the centered
/// rectangle `(h - 2 bv) x (w - 2 bh)` keeps as close to half the area as
/// integer bands allow. For each `bh` the best `bv` misses half by at most
/// one kept row; among those, bands closest to equal width win, then the
/// smaller error.
pub fn uncrop_band_widths(h: usize, w: usize) -> Result<(usize, usize)> {
    if h < 4 || w < 4 {
        return Err(Error::InvalidShape(alloc::format!("border band needs at least 4x4, got {h}x{w}")));
    }
    let half = (h * w) as f64 / 2.0;
    let mut best: Option<((bool, usize, f64), usize, usize)> = None;
    for bh in 1..(w + 1) / 2 {
        let kw = w - 2 * bh;
        let exact = (h as f64 - half / kw as f64) / 2.0;
        for bv in [Float::floor(exact), Float::ceil(exact)] {
            let bv = (bv.max(1.0) as usize).min((h - 1) / 2);
            let err = (((h - 2 * bv) * kw) as f64 - half).abs();
            let key = (err > kw as f64, bv.abs_diff(bh), err);
            if best.is_none_or(|(k, _, _)| key < k) {
                best = Some((key, bv, bh));
            }
        }
    }
    best.map(|(_, bv, bh)| (bv, bh))
        .ok_or_else(|| Error::InvalidShape(alloc::format!("no border band fits {h}x{w}")))
}

/// Border band around a centered rectangle of about half the image.
pub fn uncrop_all_sides_mask(h: usize, w: usize) -> Result<BinaryMask> {
    let (bv, bh) = uncrop_band_widths(h, w)?;
    let mut m = BinaryMask::ones(h, w);
    for y in bv..h - bv {
        for x in bh..w - bh {
            m.set(y, x, false);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_masks_respect_bounds_and_rects() {
        let mut rng = RandomSource::seed_from_u64(1);
        let mut counts = [0usize; 5];
        for _ in 0..2000 {
            let r = gen_rect_masks(32, 24, &mut rng).unwrap();
            let a = r.mask.area_fraction();
            assert!((0.10..=0.40).contains(&a), "{a}");
            assert!((1..=5).contains(&r.rects.len()));
            counts[r.rects.len() - 1] += 1;
            let mut union = BinaryMask::zeros(32, 24);
            r.rects.iter().for_each(|q| union.fill_rect(q));
            assert_eq!(union, r.mask);
        }
        assert!(counts.iter().all(|&c| c > 300));
        assert!(gen_rect_masks(7, 8, &mut rng).is_err());
    }

    #[test]
    fn freeform_edge_cases() {
        let mut rng = RandomSource::seed_from_u64(2);
        let none = BrushParams { min_strokes: 0, max_strokes: 0, ..Default::default() };
        assert_eq!(gen_freeform_mask(16, 16, &none, &mut rng).unwrap().count(), 0);
        let fat = BrushParams {
            min_strokes: 1,
            max_strokes: 1,
            min_segments: 1,
            max_segments: 1,
            // Width relative to the smaller side; 2.5 * 16 = 40 >= 2 * 20.
            min_width: 2.5,
            max_width: 2.5,
            max_segment_length: 2.0,
            ..Default::default()
        };
        for _ in 0..50 {
            assert!(gen_freeform_mask(16, 20, &fat, &mut rng).unwrap().area_fraction() > 0.5);
        }
        assert!(gen_freeform_mask(4, 16, &BrushParams::default(), &mut rng).is_err());
    }

    #[test]
    fn freeform_mean_area_in_calibrated_band() {
        let p = BrushParams::default();
        let mut rng = RandomSource::seed_from_u64(3);
        let n = 10_000;
        let mean = (0..n).map(|_| gen_freeform_mask(64, 64, &p, &mut rng).unwrap().area_fraction()).sum::<f64>() / n as f64;
        assert!(p.target_band.0 <= mean && mean <= p.target_band.1, "{mean}");
    }

    #[test]
    fn one_side_right_masks_right_columns() {
        let m = uncrop_side_mask(8, 8, Side::Right).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(m.get(y, x), x >= 4);
            }
        }
        assert_eq!(m.area_fraction(), 0.5);
        for s in Side::ALL {
            let m = uncrop_side_mask(6, 10, s).unwrap();
            assert_eq!(m.count(), 30);
            assert_eq!(m.count() + m.complement().count(), 60);
        }
        assert!(uncrop_side_mask(7, 8, Side::Left).is_err());
    }

    #[test]
    fn all_sides_keeps_half_within_a_row() {
        for (h, w) in [(64, 64), (32, 32), (8, 8), (16, 24), (64, 48), (10, 30)] {
            let m = uncrop_all_sides_mask(h, w).unwrap();
            let kept = m.complement().count() as f64;
            assert!((kept - (h * w) as f64 / 2.0).abs() <= w as f64, "{h}x{w}: kept {kept}");
            // Kept pixels form a centered rectangle.
            let (bv, bh) = uncrop_band_widths(h, w).unwrap();
            assert_eq!(kept as usize, (h - 2 * bv) * (w - 2 * bh));
        }
        assert!(uncrop_all_sides_mask(2, 8).is_err());
    }
}
