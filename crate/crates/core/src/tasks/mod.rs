//! Corruption operators that turn a clean image into a `(x, y0, mask)`
//! training pair for each image-to-image task.

mod jpeg;
mod masks;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use jpeg::{
    from_u8, jpeg_degrade, qf_probabilities, qf_weight, rgb8_to_tensor, sample_jpeg_qf, tensor_to_rgb8, to_u8, JpegCodec,
    Rgb8, QF_RANGE,
};
pub use masks::{
    gen_freeform_mask, gen_rect_masks, uncrop_all_sides_mask, uncrop_band_widths, uncrop_side_mask, BinaryMask,
    BrushParams, Rect, RectMasks, Side, UncropMode, RECT_AREA_BOUNDS, RECT_MAX_ATTEMPTS,
};

use crate::{Error, ImageTensor, RandomSource, Real, Result, Shape4};

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Probability that an inpainting mask is free-form rather than rectangles.
pub const FREEFORM_PROBABILITY: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Colorization,
    Inpainting,
    Uncropping,
    JpegRestoration,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Colorization, Task::Inpainting, Task::Uncropping, Task::JpegRestoration];

    pub fn name(self) -> &'static str {
        match self {
            Task::Colorization => "colorization",
            Task::Inpainting => "inpainting",
            Task::Uncropping => "uncropping",
            Task::JpegRestoration => "jpeg_restoration",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s || (s == "jpeg" && *t == Task::JpegRestoration))
            .ok_or_else(|| Error::InvalidArgument(alloc::format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Full,
    Freeform,
    Rects,
    UncropSide,
    UncropAll,
}

/// Parameters the corruption was drawn with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub task: Task,
    pub mask_kind: MaskKind,
    pub area_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qf: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<Side>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rects: Vec<Rect>,
}

impl TaskMeta {
    pub fn full(task: Task) -> Self {
        Self { task, mask_kind: MaskKind::Full, area_fraction: 1.0, qf: None, side: None, rects: Vec::new() }
    }
}

/// One training or evaluation example. Tensors hold a single batch item;
/// `mask` has one channel and marks the generated (and loss) region.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSample<T: Real> {
    pub x: ImageTensor<T>,
    pub y0: ImageTensor<T>,
    pub mask: ImageTensor<T>,
    pub meta: TaskMeta,
}

/// Stacked [`CorruptionSample`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionBatch<T: Real> {
    pub x: ImageTensor<T>,
    pub y0: ImageTensor<T>,
    pub mask: ImageTensor<T>,
    pub meta: Vec<TaskMeta>,
}

impl<T: Real> CorruptionBatch<T> {
    pub fn from_samples(samples: &[CorruptionSample<T>]) -> Result<Self> {
        let xs: Vec<_> = samples.iter().map(|s| s.x.clone()).collect();
        let ys: Vec<_> = samples.iter().map(|s| s.y0.clone()).collect();
        let ms: Vec<_> = samples.iter().map(|s| s.mask.clone()).collect();
        Ok(Self {
            x: ImageTensor::stack(&xs)?,
            y0: ImageTensor::stack(&ys)?,
            mask: ImageTensor::stack(&ms)?,
            meta: samples.iter().map(|s| s.meta.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// True when every item is supervised on the whole image.
    pub fn full_masks(&self) -> bool {
        self.meta.iter().all(|m| m.mask_kind == MaskKind::Full)
    }
}

/// Luma replicated to all three channels.
pub fn to_grayscale<T: Real>(y0: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    let s = y0.shape();
    if s.c != 3 {
        return Err(Error::shape(s.with_c(3), s));
    }
    let plane = s.h * s.w;
    let w = LUMA.map(T::lit);
    let mut out = y0.clone();
    for item in out.data_mut().chunks_mut(3 * plane) {
        for p in 0..plane {
            let l = w[0] * item[p] + w[1] * item[plane + p] + w[2] * item[2 * plane + p];
            item[p] = l;
            item[plane + p] = l;
            item[2 * plane + p] = l;
        }
    }
    Ok(out)
}

fn check_single(y0: &ImageTensor<impl Real>) -> Result<Shape4> {
    let s = y0.shape();
    if s.n != 1 {
        return Err(Error::shape(s.with_n(1), s));
    }
    Ok(s)
}

/// `y0` outside the mask and standard normal noise inside it, on every
/// channel.
pub fn fill_with_noise<T: Real>(y0: &ImageTensor<T>, mask: &BinaryMask, rng: &mut RandomSource) -> Result<ImageTensor<T>> {
    let s = y0.shape();
    if mask.height() != s.h || mask.width() != s.w {
        return Err(Error::shape((s.h, s.w), (mask.height(), mask.width())));
    }
    let plane = s.h * s.w;
    let mut x = y0.clone();
    for chunk in x.data_mut().chunks_mut(plane) {
        for (v, &m) in chunk.iter_mut().zip(mask.data()) {
            if m == 1 {
                *v = T::lit(rng.normal());
            }
        }
    }
    Ok(x)
}

pub fn make_colorization_sample<T: Real>(y0: &ImageTensor<T>) -> Result<CorruptionSample<T>> {
    let s = check_single(y0)?;
    Ok(CorruptionSample {
        x: to_grayscale(y0)?,
        y0: y0.clone(),
        mask: ImageTensor::ones(s.with_c(1)),
        meta: TaskMeta::full(Task::Colorization),
    })
}

fn masked_sample<T: Real>(
    y0: &ImageTensor<T>,
    mask: &BinaryMask,
    mut meta: TaskMeta,
    rng: &mut RandomSource,
) -> Result<CorruptionSample<T>> {
    meta.area_fraction = mask.area_fraction();
    Ok(CorruptionSample { x: fill_with_noise(y0, mask, rng)?, y0: y0.clone(), mask: mask.to_tensor(), meta })
}

/// Free-form mask with probability 0.6, rectangles otherwise.
pub fn make_inpainting_sample<T: Real>(
    y0: &ImageTensor<T>,
    brush: &BrushParams,
    rng: &mut RandomSource,
) -> Result<CorruptionSample<T>> {
    let s = check_single(y0)?;
    let mut meta = TaskMeta::full(Task::Inpainting);
    let mask = if rng.bernoulli(FREEFORM_PROBABILITY) {
        meta.mask_kind = MaskKind::Freeform;
        gen_freeform_mask(s.h, s.w, brush, rng)?
    } else {
        let r = gen_rect_masks(s.h, s.w, rng)?;
        meta.mask_kind = MaskKind::Rects;
        meta.rects = r.rects;
        r.mask
    };
    masked_sample(y0, &mask, meta, rng)
}

/// Uncropping with a given mode; for `OneSide` the side is uniform.
pub fn make_uncropping_sample<T: Real>(
    y0: &ImageTensor<T>,
    mode: UncropMode,
    rng: &mut RandomSource,
) -> Result<CorruptionSample<T>> {
    let s = check_single(y0)?;
    let mut meta = TaskMeta::full(Task::Uncropping);
    let mask = match mode {
        UncropMode::OneSide => {
            let side = Side::ALL[rng.below(4)];
            meta.mask_kind = MaskKind::UncropSide;
            meta.side = Some(side);
            uncrop_side_mask(s.h, s.w, side)?
        }
        UncropMode::AllSides => {
            meta.mask_kind = MaskKind::UncropAll;
            uncrop_all_sides_mask(s.h, s.w)?
        }
    };
    masked_sample(y0, &mask, meta, rng)
}

/// Uncropping with the mode and side chosen uniformly.
pub fn make_random_uncropping_sample<T: Real>(y0: &ImageTensor<T>, rng: &mut RandomSource) -> Result<CorruptionSample<T>> {
    let mode = if rng.bernoulli(0.5) { UncropMode::OneSide } else { UncropMode::AllSides };
    make_uncropping_sample(y0, mode, rng)
}

pub fn make_jpeg_sample<T: Real>(
    y0: &ImageTensor<T>,
    qf: u8,
    codec: &dyn JpegCodec,
) -> Result<CorruptionSample<T>> {
    let s = check_single(y0)?;
    let mut meta = TaskMeta::full(Task::JpegRestoration);
    meta.qf = Some(qf);
    Ok(CorruptionSample { x: jpeg_degrade(y0, qf, codec)?, y0: y0.clone(), mask: ImageTensor::ones(s.with_c(1)), meta })
}

/// Applies the corruption for each task. JPEG restoration needs a codec.
#[derive(Clone, Copy)]
pub struct Corruptor<'a> {
    pub brush: BrushParams,
    pub codec: Option<&'a dyn JpegCodec>,
}

impl core::fmt::Debug for Corruptor<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Corruptor").field("brush", &self.brush).field("codec", &self.codec.is_some()).finish()
    }
}

impl<'a> Corruptor<'a> {
    pub fn new(brush: BrushParams, codec: Option<&'a dyn JpegCodec>) -> Self {
        Self { brush, codec }
    }

    pub fn apply<T: Real>(&self, task: Task, y0: &ImageTensor<T>, rng: &mut RandomSource) -> Result<CorruptionSample<T>> {
        match task {
            Task::Colorization => make_colorization_sample(y0),
            Task::Inpainting => make_inpainting_sample(y0, &self.brush, rng),
            Task::Uncropping => make_random_uncropping_sample(y0, rng),
            Task::JpegRestoration => {
                let codec = self
                    .codec
                    .ok_or_else(|| Error::InvalidConfig("JPEG restoration needs a codec".into()))?;
                let qf = sample_jpeg_qf(rng);
                make_jpeg_sample(y0, qf, codec)
            }
        }
    }

    /// Assigns each image a task uniformly from `tasks` and corrupts it.
    pub fn multi_task_batch<T: Real>(
        &self,
        images: &[ImageTensor<T>],
        tasks: &[Task],
        rng: &mut RandomSource,
    ) -> Result<CorruptionBatch<T>> {
        if tasks.is_empty() {
            return Err(Error::InvalidArgument("empty task set".into()));
        }
        let samples = images
            .iter()
            .map(|y0| {
                let task = if tasks.len() == 1 { tasks[0] } else { tasks[rng.below(tasks.len())] };
                self.apply(task, y0, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        CorruptionBatch::from_samples(&samples)
    }
}
