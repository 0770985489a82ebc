//! Image folders as training data.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::RgbImage;
use palette_core::toy::ImageSampler;
use palette_core::{ImageTensor, RandomSource, Real, Shape4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{open_rgb, rgb_to_tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropPolicy {
    /// Random square with side `min(w, h)`, resized to the target size.
    LargestSquareResize,
    /// Random `size x size` window at native resolution.
    RandomCrop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnError {
    #[default]
    Fatal,
    Skip,
}

/// Offset and side of a random largest square crop of a `w x h` image.
pub fn largest_square(w: u32, h: u32, rng: &mut RandomSource) -> (u32, u32, u32) {
    let side = w.min(h);
    (rng.int_inclusive(0, (w - side) as usize) as u32, rng.int_inclusive(0, (h - side) as usize) as u32, side)
}

/// Uniform offset of a `size x size` window; `None` when the image is smaller.
pub fn random_crop_offset(w: u32, h: u32, size: u32, rng: &mut RandomSource) -> Option<(u32, u32)> {
    if w < size || h < size {
        return None;
    }
    Some((rng.int_inclusive(0, (w - size) as usize) as u32, rng.int_inclusive(0, (h - size) as usize) as u32))
}

pub fn apply_crop(img: &RgbImage, policy: CropPolicy, size: u32, rng: &mut RandomSource) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    match policy {
        CropPolicy::LargestSquareResize => {
            let (x, y, side) = largest_square(w, h, rng);
            let sq = imageops::crop_imm(img, x, y, side, side).to_image();
            Ok(if side == size { sq } else { imageops::resize(&sq, size, size, FilterType::Triangle) })
        }
        CropPolicy::RandomCrop => {
            let (x, y) = random_crop_offset(w, h, size, rng)
                .ok_or_else(|| Error::Image(format!("{w}x{h} image is smaller than the {size}px crop")))?;
            Ok(imageops::crop_imm(img, x, y, size, size).to_image())
        }
    }
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Sorted list of image files directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && is_image(&p) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::At { path: dir.to_path_buf(), message: "no PNG or JPEG files".into() });
    }
    Ok(files)
}

#[derive(Debug, Clone)]
pub struct ImageFolder {
    pub files: Vec<PathBuf>,
    pub policy: CropPolicy,
    pub size: u32,
    pub on_error: OnError,
}

pub fn load_dataset(path: &Path, policy: CropPolicy, size: u32, on_error: OnError) -> Result<ImageFolder> {
    if size == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    Ok(ImageFolder { files: list_images(path)?, policy, size, on_error })
}

impl ImageFolder {
    fn load_one<T: Real>(&self, path: &Path, rng: &mut RandomSource) -> Result<ImageTensor<T>> {
        let img = open_rgb(path)?;
        let cropped = apply_crop(&img, self.policy, self.size, rng).map_err(|e| e.context(path))?;
        rgb_to_tensor(&cropped)
    }

    /// One pass over the folder in a seeded random order. Under
    /// [`OnError::Skip`] unreadable files are dropped; under
    /// [`OnError::Fatal`] they are yielded as errors.
    pub fn epoch<'a, T: Real>(&'a self, rng: &'a mut RandomSource) -> impl Iterator<Item = Result<ImageTensor<T>>> + 'a {
        let mut order: Vec<usize> = (0..self.files.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        order.into_iter().filter_map(move |i| match self.load_one(&self.files[i], rng) {
            Ok(t) => Some(Ok(t)),
            Err(_) if self.on_error == OnError::Skip => None,
            Err(e) => Some(Err(e)),
        })
    }

    /// Batches of `batch` images, streaming through shuffled epochs.
    pub fn batches<'a, T: Real>(&'a self, batch: usize, rng: &'a mut RandomSource) -> impl Iterator<Item = Result<ImageTensor<T>>> + 'a {
        std::iter::from_fn(move || Some(self.draw(batch, rng).map_err(Error::from)))
    }

    fn draw<T: Real>(&self, n: usize, rng: &mut RandomSource) -> palette_core::Result<ImageTensor<T>> {
        let mut items = Vec::with_capacity(n);
        let mut failures = 0;
        while items.len() < n {
            let path = &self.files[rng.below(self.files.len())];
            match self.load_one(path, rng) {
                Ok(t) => items.push(t),
                Err(_) if self.on_error == OnError::Skip && failures < 100 * n.max(1) => failures += 1,
                Err(e) => return Err(palette_core::Error::InvalidArgument(e.to_string())),
            }
        }
        ImageTensor::stack(&items)
    }
}

impl<T: Real> ImageSampler<T> for ImageFolder {
    fn image_shape(&self) -> Shape4 {
        Shape4::new(1, 3, self.size as usize, self.size as usize)
    }

    /// Files drawn uniformly with replacement.
    fn sample_images(&self, n: usize, rng: &mut RandomSource) -> palette_core::Result<(ImageTensor<T>, Option<Vec<usize>>)> {
        Ok((self.draw(n, rng)?, None))
    }
}
