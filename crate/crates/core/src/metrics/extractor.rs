use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Padding, ParamId, ParamStore, Tape, Var};
use crate::optim::{AdamConfig, AdamState};
use crate::{Error, ImageTensor, RandomSource, Real, Result};

/// Spatial activation maps of one layer for a batch, `[n, c, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn item(&self, i: usize) -> &[f64] {
        let len = self.c * self.h * self.w;
        &self.data[i * len..(i + 1) * len]
    }
}

/// Everything an extractor reports for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub n: usize,
    pub num_classes: usize,
    /// `[n, num_classes]`.
    pub logits: Vec<f64>,
    pub dim: usize,
    /// Penultimate embedding, `[n, dim]`.
    pub embedding: Vec<f64>,
    /// Intermediate maps, shallowest first.
    pub maps: Vec<FeatureMap>,
}

impl Features {
    pub fn embedding_row(&self, i: usize) -> &[f64] {
        &self.embedding[i * self.dim..(i + 1) * self.dim]
    }

    pub fn logit_row(&self, i: usize) -> &[f64] {
        &self.logits[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Softmax of each logit row.
    pub fn probabilities(&self) -> Vec<f64> {
        let k = self.num_classes;
        let mut out = Vec::with_capacity(self.logits.len());
        for row in self.logits.chunks(k) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| Float::exp(v - m)).collect();
            let z: f64 = e.iter().sum();
            out.extend(e.into_iter().map(|v| v / z));
        }
        out
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.logits
            .chunks(self.num_classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect()
    }
}

/// A frozen image classifier used for feature-space metrics.
pub trait FeatureExtractor {
    fn num_classes(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn extract<T: Real>(&self, images: &ImageTensor<T>) -> Result<Features>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    /// Width of each convolution stage; stages after the first halve the
    /// resolution.
    pub channels: Vec<usize>,
    pub num_classes: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { in_channels: 3, channels: vec![16, 32, 32], num_classes: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTraining {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self { steps: 600, batch_size: 32, learning_rate: 2e-3 }
    }
}

#[derive(Debug, Clone)]
struct Stage {
    w: ParamId,
    b: ParamId,
}

/// Small convolutional classifier: 3x3 conv + SiLU stages with average
/// pooling between them, a global mean pool, and a linear head.
#[derive(Debug, Clone)]
pub struct SmallClassifier<P: Real = f32> {
    config: ClassifierConfig,
    stages: Vec<Stage>,
    head_w: ParamId,
    head_b: ParamId,
    pub params: ParamStore<P>,
}

impl<P: Real> SmallClassifier<P> {
    pub fn new(config: ClassifierConfig, rng: &mut RandomSource) -> Result<Self> {
        if config.channels.is_empty() || config.num_classes < 2 || config.in_channels == 0 || config.channels.contains(&0) {
            return Err(Error::InvalidConfig("classifier needs stages, channels and >= 2 classes".into()));
        }
        let mut params = ParamStore::new();
        let mut normal = |shape: Vec<usize>, fan: usize, params: &mut ParamStore<P>, name: String| {
            let len: usize = shape.iter().product();
            let std = 1.0 / (fan as f64).sqrt();
            params.add(name, shape, (0..len).map(|_| P::lit(rng.normal() * std)).collect())
        };
        let mut stages = Vec::new();
        let mut cin = config.in_channels;
        for (i, &c) in config.channels.iter().enumerate() {
            let w = normal(vec![c, cin, 3, 3], cin * 9, &mut params, alloc::format!("stage.{i}.weight"));
            let b = params.add(alloc::format!("stage.{i}.bias"), vec![c], vec![P::zero(); c]);
            stages.push(Stage { w, b });
            cin = c;
        }
        let k = config.num_classes;
        let head_w = normal(vec![k, cin], cin, &mut params, "head.weight".into());
        let head_b = params.add("head.bias", vec![k], vec![P::zero(); k]);
        Ok(Self { config, stages, head_w, head_b, params })
    }

    pub fn from_params(config: ClassifierConfig, params: ParamStore<P>) -> Result<Self> {
        let fresh = Self::new(config, &mut RandomSource::seed_from_u64(0))?;
        if !fresh.params.same_layout(&params) {
            return Err(Error::InvalidConfig("classifier parameters do not match config".into()));
        }
        Ok(Self { params, ..fresh })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    /// Records the network; returns (logits, embedding, stage outputs).
    fn forward_tape(&self, tape: &mut Tape<'_, P>, x: Var) -> (Var, Var, Vec<Var>) {
        let mut h = x;
        let mut maps = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                h = tape.avg_pool2(h);
            }
            let (w, b) = (tape.param(s.w), tape.param(s.b));
            h = tape.conv2d(h, w, Some(b), 1, Padding::Zero);
            h = tape.silu(h);
            maps.push(h);
        }
        let emb = tape.global_mean_pool(h);
        let (w, b) = (tape.param(self.head_w), tape.param(self.head_b));
        (tape.linear(emb, w, b), emb, maps)
    }

    fn check_input<T: Real>(&self, images: &ImageTensor<T>) -> Result<()> {
        let s = images.shape();
        if s.c != self.config.in_channels {
            return Err(Error::shape(s.with_c(self.config.in_channels), s));
        }
        let m = 1 << (self.stages.len() - 1);
        if s.h % m != 0 || s.w % m != 0 {
            return Err(Error::InvalidShape(alloc::format!("classifier input not divisible by {m}")));
        }
        Ok(())
    }

    /// Fits the classifier with cross-entropy and Adam. Returns the loss of
    /// the last step.
    pub fn train<T: Real>(
        &mut self,
        images: &ImageTensor<T>,
        labels: &[usize],
        recipe: &ClassifierTraining,
        rng: &mut RandomSource,
    ) -> Result<f64> {
        self.check_input(images)?;
        let n = images.shape().n;
        if labels.len() != n {
            return Err(Error::shape(n, labels.len()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.config.num_classes) {
            return Err(Error::InvalidArgument(alloc::format!("label {l} out of range")));
        }
        let adam = AdamConfig { learning_rate: recipe.learning_rate, warmup_steps: recipe.steps / 20, ..Default::default() };
        let mut state = AdamState::new(&self.params);
        let data: ImageTensor<P> = images.cast();
        let mut last = f64::NAN;
        for step in 0..recipe.steps {
            let idx: Vec<usize> = (0..recipe.batch_size.min(n)).map(|_| rng.below(n)).collect();
            let batch = ImageTensor::stack(&idx.iter().map(|&i| data.item(i)).collect::<Vec<_>>())?;
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let grads = {
                let mut tape = Tape::new(&self.params);
                let x = tape.input_image(batch);
                let (logits, _, _) = self.forward_tape(&mut tape, x);
                let loss = tape.softmax_cross_entropy(logits, &ys);
                last = tape.scalar(loss).as_f64();
                if !last.is_finite() {
                    return Err(Error::NonFiniteLoss { step, loss: last });
                }
                tape.backward(loss)
            };
            state.update(&adam, &mut self.params, &grads)?;
        }
        Ok(last)
    }
}

/// Largest batch extracted in one pass.
const EXTRACT_CHUNK: usize = 64;

impl<P: Real> FeatureExtractor for SmallClassifier<P> {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn feature_dim(&self) -> usize {
        *self.config.channels.last().expect("validated")
    }

    fn extract<T: Real>(&self, images: &ImageTensor<T>) -> Result<Features> {
        self.check_input(images)?;
        let n = images.shape().n;
        let mut out = Features {
            n,
            num_classes: self.config.num_classes,
            logits: Vec::with_capacity(n * self.config.num_classes),
            dim: self.feature_dim(),
            embedding: Vec::with_capacity(n * self.feature_dim()),
            maps: Vec::new(),
        };
        for start in (0..n).step_by(EXTRACT_CHUNK) {
            let end = (start + EXTRACT_CHUNK).min(n);
            let batch: ImageTensor<P> = images.slice(start, end).cast();
            let mut tape = Tape::new(&self.params);
            let x = tape.input_image(batch);
            let (logits, emb, maps) = self.forward_tape(&mut tape, x);
            out.logits.extend(tape.value(logits).iter().map(|v| v.as_f64()));
            out.embedding.extend(tape.value(emb).iter().map(|v| v.as_f64()));
            for (i, &m) in maps.iter().enumerate() {
                let s = tape.shape(m).to_vec();
                if out.maps.len() <= i {
                    out.maps.push(FeatureMap { c: s[1], h: s[2], w: s[3], data: Vec::with_capacity(n * s[1] * s[2] * s[3]) });
                }
                out.maps[i].data.extend(tape.value(m).iter().map(|v| v.as_f64()));
            }
        }
        Ok(out)
    }
}
