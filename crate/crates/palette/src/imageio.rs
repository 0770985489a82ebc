//! PNG/JPEG reading and PNG writing of `[-1, 1]` image tensors.

use std::path::Path;

use image::RgbImage;
use palette_core::tasks::{rgb8_to_tensor, tensor_to_rgb8, Rgb8};
use palette_core::{ImageTensor, Real};

use crate::error::{Error, Result};

pub fn open_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::At { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(img.into_rgb8())
}

pub fn rgb_to_tensor<T: Real>(img: &RgbImage) -> Result<ImageTensor<T>> {
    let rgb = Rgb8 { width: img.width() as usize, height: img.height() as usize, data: img.as_raw().clone() };
    Ok(rgb8_to_tensor(&rgb)?)
}

pub fn read_image<T: Real>(path: &Path) -> Result<ImageTensor<T>> {
    rgb_to_tensor(&open_rgb(path)?)
}

/// Writes batch item `item`; values are clamped to `[-1, 1]`.
pub fn write_png<T: Real>(path: &Path, images: &ImageTensor<T>, item: usize) -> Result<()> {
    let rgb = tensor_to_rgb8(images, item)?;
    let img = RgbImage::from_raw(rgb.width as u32, rgb.height as u32, rgb.data)
        .ok_or_else(|| Error::Image("buffer size mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::At { path: path.to_path_buf(), message: e.to_string() })
}

/// Writes a one-channel `[1, 1, h, w]` 0/1 mask as a black/white PNG.
pub fn write_mask_png(path: &Path, mask: &palette_core::tasks::BinaryMask) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }]));
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::At { path: path.to_path_buf(), message: e.to_string() })
}

pub fn read_mask_png(path: &Path) -> Result<palette_core::tasks::BinaryMask> {
    let img = image::open(path).map_err(|e| Error::At { path: path.to_path_buf(), message: e.to_string() })?.into_luma8();
    let data = img.as_raw().iter().map(|&v| u8::from(v >= 128)).collect();
    Ok(palette_core::tasks::BinaryMask::from_vec(img.height() as usize, img.width() as usize, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use palette_core::{RandomSource, Shape4};

    #[test]
    fn png_round_trip_is_exact_on_the_u8_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let mut rng = RandomSource::seed_from_u64(3);
        let img = ImageTensor::<f64>::randn(Shape4::new(2, 3, 5, 9), &mut rng).clamp(-1.0, 1.0);
        write_png(&p, &img, 1).unwrap();
        let back = read_image::<f64>(&p).unwrap();
        assert_eq!(back.shape(), Shape4::new(1, 3, 5, 9));
        // Quantization to 256 levels over a range of 2.
        assert!(back.max_abs_diff(&img.item(1)).unwrap() <= 1.0 / 255.0 + 1e-12);
        write_png(&dir.path().join("b.png"), &back, 0).unwrap();
        assert_eq!(read_image::<f64>(&dir.path().join("b.png")).unwrap(), back);
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mut m = palette_core::tasks::BinaryMask::zeros(4, 6);
        m.set(1, 2, true);
        m.set(3, 5, true);
        write_mask_png(&p, &m).unwrap();
        assert_eq!(read_mask_png(&p).unwrap(), m);
    }

    #[test]
    fn unreadable_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not an image").unwrap();
        let e = read_image::<f32>(&p).unwrap_err().to_string();
        assert!(e.contains("bad.png"), "{e}");
    }
}
