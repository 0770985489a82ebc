//! Baseline JPEG round trip for the restoration task.

use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use palette_core::tasks::{JpegCodec, Rgb8};

/// Encodes with 4:2:0 chroma subsampling and the standard quantization
/// tables scaled by quality; decodes with the `image` crate.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineJpeg;

impl BaselineJpeg {
    pub fn encode(&self, img: &Rgb8, quality: u8) -> palette_core::Result<Vec<u8>> {
        let err = |m: String| palette_core::Error::Codec(m);
        let (w, h) = (u16::try_from(img.width), u16::try_from(img.height));
        let (Ok(w), Ok(h)) = (w, h) else {
            return Err(err(format!("{}x{} exceeds JPEG limits", img.width, img.height)));
        };
        let mut out = Vec::new();
        let mut enc = Encoder::new(&mut out, quality.clamp(1, 100));
        enc.set_sampling_factor(SamplingFactor::R_4_2_0);
        enc.encode(&img.data, w, h, ColorType::Rgb).map_err(|e| err(e.to_string()))?;
        Ok(out)
    }

    pub fn decode(&self, bytes: &[u8]) -> palette_core::Result<Rgb8> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Jpeg)
            .map_err(|e| palette_core::Error::Codec(e.to_string()))?
            .into_rgb8();
        Ok(Rgb8 { width: img.width() as usize, height: img.height() as usize, data: img.into_raw() })
    }
}

impl JpegCodec for BaselineJpeg {
    fn round_trip(&self, img: &Rgb8, quality: u8) -> palette_core::Result<Rgb8> {
        let out = self.decode(&self.encode(img, quality)?)?;
        if (out.width, out.height) != (img.width, img.height) {
            return Err(palette_core::Error::Codec("decoded size differs from input".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use palette_core::tasks::{jpeg_degrade, rgb8_to_tensor, tensor_to_rgb8};
    use palette_core::toy::{ImageSampler, ToyColorization};
    use palette_core::{ImageTensor, RandomSource};

    fn smooth(size: usize) -> ImageTensor<f64> {
        let toy = ToyColorization { size, ..Default::default() };
        let mut rng = RandomSource::seed_from_u64(2);
        toy.sample_images(1, &mut rng).unwrap().0
    }

    #[test]
    fn high_quality_is_nearly_lossless() {
        let y0 = smooth(32);
        let out = jpeg_degrade(&y0, 100, &BaselineJpeg).unwrap();
        assert_eq!(out.shape(), y0.shape());
        let mae = out.mean_abs_diff(&y0).unwrap();
        assert!(mae < 0.02, "mae {mae}");
    }

    #[test]
    fn error_grows_as_quality_drops() {
        let y0 = smooth(32);
        let e = |q| jpeg_degrade(&y0, q, &BaselineJpeg).unwrap().mean_abs_diff(&y0).unwrap();
        let (e30, e5) = (e(30), e(5));
        assert!(e5 >= e30, "qf5 {e5} qf30 {e30}");
    }

    #[test]
    fn odd_dimensions_survive() {
        let mut rng = RandomSource::seed_from_u64(1);
        let img = ImageTensor::<f64>::randn(palette_core::Shape4::new(1, 3, 13, 7), &mut rng).clamp(-1.0, 1.0);
        let rgb = tensor_to_rgb8(&img, 0).unwrap();
        let out = BaselineJpeg.round_trip(&rgb, 20).unwrap();
        assert_eq!((out.width, out.height), (7, 13));
        assert_eq!(rgb8_to_tensor::<f64>(&out).unwrap().shape(), img.shape());
    }
}
