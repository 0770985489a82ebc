use alloc::vec::Vec;

use num_traits::Float;

use crate::{Error, ImageTensor, RandomSource, Real, Result, Shape4};

pub const QF_RANGE: (u8, u8) = (5, 30);

/// Unnormalized weight `exp(-q / 10)` of quality factor `q`.
pub fn qf_weight(q: u8) -> f64 {
    Float::exp(-(q as f64) / 10.0)
}

/// Normalized probabilities for `q` in `QF_RANGE`, lowest first.
pub fn qf_probabilities() -> Vec<(u8, f64)> {
    let qs: Vec<u8> = (QF_RANGE.0..=QF_RANGE.1).collect();
    let z: f64 = qs.iter().map(|&q| qf_weight(q)).sum();
    qs.into_iter().map(|q| (q, qf_weight(q) / z)).collect()
}

/// Integer quality factor in `[5, 30]` with probability proportional to
/// `exp(-q / 10)`.
pub fn sample_jpeg_qf(rng: &mut RandomSource) -> u8 {
    let u = rng.uniform();
    let mut acc = 0.0;
    let probs = qf_probabilities();
    for &(q, p) in &probs {
        acc += p;
        if u < acc {
            return q;
        }
    }
    QF_RANGE.1
}

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Baseline JPEG round trip: 4:2:0 chroma subsampling with the standard
/// luminance and chrominance tables scaled by the libjpeg quality mapping.
pub trait JpegCodec {
    fn round_trip(&self, image: &Rgb8, quality: u8) -> Result<Rgb8>;
}

/// `[-1, 1]` to 8-bit with rounding and clamping.
pub fn to_u8<T: Real>(v: T) -> u8 {
    let s = (v.as_f64() + 1.0) * 127.5;
    Float::round(s).clamp(0.0, 255.0) as u8
}

pub fn from_u8<T: Real>(v: u8) -> T {
    T::lit(v as f64 / 127.5 - 1.0)
}

/// Converts one 3-channel batch item to interleaved 8-bit RGB.
pub fn tensor_to_rgb8<T: Real>(t: &ImageTensor<T>, item: usize) -> Result<Rgb8> {
    let s = t.shape();
    if s.c != 3 || item >= s.n {
        return Err(Error::shape(Shape4::new(item + 1, 3, s.h, s.w), s));
    }
    let mut data = Vec::with_capacity(s.h * s.w * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                data.push(to_u8(t.at(item, c, y, x)));
            }
        }
    }
    Ok(Rgb8 { width: s.w, height: s.h, data })
}

pub fn rgb8_to_tensor<T: Real>(img: &Rgb8) -> Result<ImageTensor<T>> {
    if img.data.len() != img.width * img.height * 3 {
        return Err(Error::shape(img.width * img.height * 3, img.data.len()));
    }
    let plane = img.width * img.height;
    let mut data = alloc::vec![T::zero(); 3 * plane];
    for (p, px) in img.data.chunks(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = from_u8(px[c]);
        }
    }
    ImageTensor::from_vec(Shape4::new(1, 3, img.height, img.width), data)
}

/// Encodes every batch item at `qf`, decodes, and maps back to `[-1, 1]`.
pub fn jpeg_degrade<T: Real>(y0: &ImageTensor<T>, qf: u8, codec: &dyn JpegCodec) -> Result<ImageTensor<T>> {
    if !(1..=100).contains(&qf) {
        return Err(Error::InvalidArgument(alloc::format!("quality factor {qf} outside 1..=100")));
    }
    let s = y0.shape();
    let mut items = Vec::with_capacity(s.n);
    for i in 0..s.n {
        let rgb = tensor_to_rgb8(y0, i)?;
        let out = codec.round_trip(&rgb, qf)?;
        if out.width != rgb.width || out.height != rgb.height {
            return Err(Error::Codec(alloc::format!(
                "decoded {}x{}, expected {}x{}",
                out.width,
                out.height,
                rgb.width,
                rgb.height
            )));
        }
        items.push(rgb8_to_tensor(&out)?);
    }
    ImageTensor::stack(&items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qf_support_and_ratio() {
        let mut rng = RandomSource::seed_from_u64(1);
        for _ in 0..10_000 {
            assert!((5..=30).contains(&sample_jpeg_qf(&mut rng)));
        }
        let p = qf_probabilities();
        assert_eq!(p.len(), 26);
        assert!((p[0].1 / p[25].1 - 2.5f64.exp()).abs() < 1e-9);
        assert!((p[0].1 / p[25].1 - 12.182).abs() < 1e-3);
        assert!((p.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn u8_round_trip() {
        for v in 0..=255u8 {
            assert_eq!(to_u8(from_u8::<f64>(v)), v);
        }
        assert_eq!(to_u8(-3.0f32), 0);
        assert_eq!(to_u8(3.0f32), 255);
    }

    struct Identity;
    impl JpegCodec for Identity {
        fn round_trip(&self, image: &Rgb8, _: u8) -> Result<Rgb8> {
            Ok(image.clone())
        }
    }

    #[test]
    fn degrade_with_identity_codec_quantizes() {
        let mut rng = RandomSource::seed_from_u64(2);
        let y = ImageTensor::<f64>::randn(Shape4::new(2, 3, 5, 7), &mut rng).clamp(-1.0, 1.0);
        let out = jpeg_degrade(&y, 50, &Identity).unwrap();
        assert_eq!(out.shape(), y.shape());
        assert!(out.max_abs_diff(&y).unwrap() <= 1.0 / 255.0 + 1e-12);
        assert!(jpeg_degrade(&y, 0, &Identity).is_err());
        assert!(jpeg_degrade(&y, 101, &Identity).is_err());
    }
}
