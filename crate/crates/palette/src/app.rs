//! Implementations behind the command-line subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use palette_core::denoiser::{ModelView, UNet};
use palette_core::diffusion::{sample, Composite};
use palette_core::metrics::{
    classification_accuracy, frechet_distance, image_stats, inception_score, ms_ssim_items, perceptual_distance,
    ClassifierConfig, ClassifierTraining, FeatureExtractor, SmallClassifier, SsimConfig,
};
use palette_core::panorama::{panorama_uncrop, Direction, PanoramaConfig};
use palette_core::tasks::{fill_with_noise, BinaryMask, Corruptor, Task};
use palette_core::toy::{ImageSampler, ToyColorization};
use palette_core::train::{StepReport, TaskBatches, TrainState, Trainer};
use palette_core::{ImageTensor, RandomSource, Result as CoreResult, Shape4};

use crate::checkpoint::Checkpoint;
use crate::codec::BaselineJpeg;
use crate::config::{DataSource, RunConfig, SamplingConfig};
use crate::dataset::{load_dataset, ImageFolder};
use crate::error::{Error, Result};
use crate::experiment::{evaluate_study, train_study_models, EvalSet, ToyStudyConfig, ToyStudyReport};
use crate::extractor_io::{load_extractor, save_extractor};
use crate::imageio::{read_image, read_mask_png, write_mask_png, write_png};
use crate::records::{metric_table, read_jsonl, write_jsonl, FixtureEntry, MetricRecord};

pub const MANIFEST: &str = "manifest.jsonl";

/// Clean images from the configured source.
pub enum Images {
    Toy(ToyColorization),
    Folder(ImageFolder),
}

impl Images {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(match cfg.data.source {
            DataSource::Toy => Images::Toy(cfg.toy.clone()),
            DataSource::Folder => {
                Images::Folder(load_dataset(&cfg.data.resolved_path()?, cfg.data.policy, cfg.data.size, cfg.data.on_error)?)
            }
        })
    }
}

impl ImageSampler<f32> for Images {
    fn image_shape(&self) -> Shape4 {
        match self {
            Images::Toy(t) => ImageSampler::<f32>::image_shape(t),
            Images::Folder(f) => ImageSampler::<f32>::image_shape(f),
        }
    }

    fn sample_images(&self, n: usize, rng: &mut RandomSource) -> CoreResult<(ImageTensor<f32>, Option<Vec<usize>>)> {
        match self {
            Images::Toy(t) => t.sample_images(n, rng),
            Images::Folder(f) => f.sample_images(n, rng),
        }
    }
}

pub struct TrainOptions {
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    /// Stop early at this step; the checkpoint can be resumed.
    pub until: Option<u64>,
    pub log_every: u64,
    pub save_every: Option<u64>,
}

pub fn train(cfg: &RunConfig, opts: &TrainOptions, mut log: impl FnMut(&StepReport)) -> Result<Checkpoint<f32>> {
    let net = UNet::new(cfg.model.clone())?;
    let trainer = Trainer::new(&net, cfg.train.clone())?;
    let mut state = match &opts.resume {
        Some(p) => {
            let ck = Checkpoint::<f32>::load(p)?;
            if ck.architecture != cfg.model || ck.train != cfg.train {
                return Err(Error::Config(format!("{}: model or train settings differ from the config", p.display())));
            }
            ck.state
        }
        None => TrainState::new(&net, cfg.train.seed),
    };
    let images = Images::from_config(cfg)?;
    let codec = BaselineJpeg;
    let source = TaskBatches { images, tasks: cfg.train.tasks.clone(), corruptor: Corruptor::new(cfg.brush, Some(&codec)) };
    let until = opts.until.unwrap_or(cfg.train.total_steps).min(cfg.train.total_steps);
    while state.step < until {
        let next = match opts.save_every {
            Some(k) if k > 0 => ((state.step / k + 1) * k).min(until),
            _ => until,
        };
        trainer.run(&mut state, &source, next, |r| {
            if opts.log_every > 0 && r.step % opts.log_every == 0 {
                log(r);
            }
        })?;
        if state.step < until {
            Checkpoint::new(&net, cfg.train.clone(), state.clone())?.save(&opts.out)?;
        }
    }
    let ck = Checkpoint::new(&net, cfg.train.clone(), state)?;
    ck.save(&opts.out)?;
    Ok(ck)
}

fn params_view<'a>(net: &'a UNet, ck: &'a Checkpoint<f32>, use_ema: bool) -> ModelView<'a, f32> {
    if use_ema {
        ck.state.ema_view(net)
    } else {
        ck.state.raw_view(net)
    }
}

/// Writes `count` frozen examples of `task` with their manifest.
pub fn make_fixtures(cfg: &RunConfig, task: Task, count: usize, seed: u64, out: &Path) -> Result<Vec<FixtureEntry>> {
    let images = Images::from_config(cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rng = RandomSource::seed_from_u64(seed);
    let codec = BaselineJpeg;
    let corruptor = Corruptor::new(cfg.brush, Some(&codec));
    let (targets, labels) = images.sample_images(count, &mut rng)?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let y0 = targets.item(i);
        let s = corruptor.apply(task, &y0, &mut rng)?;
        let mask = BinaryMask::from_tensor(&s.mask)?;
        // Masked pixels are stored as zero; noise is drawn again at sampling time.
        let plane = mask.height() * mask.width();
        let mut observed = s.x.clone();
        for ch in observed.data_mut().chunks_mut(plane) {
            for (v, &m) in ch.iter_mut().zip(mask.data()) {
                if m == 1 && !matches!(task, Task::Colorization | Task::JpegRestoration) {
                    *v = 0.0;
                }
            }
        }
        let id = format!("{i:04}");
        let e = FixtureEntry {
            target: format!("{id}_target.png"),
            input: format!("{id}_input.png"),
            mask: format!("{id}_mask.png"),
            label: labels.as_ref().map(|l| l[i]),
            meta: s.meta,
            id,
        };
        write_png(&out.join(&e.target), &y0, 0)?;
        write_png(&out.join(&e.input), &observed, 0)?;
        write_mask_png(&out.join(&e.mask), &mask)?;
        entries.push(e);
    }
    write_jsonl(&out.join(MANIFEST), &entries)?;
    Ok(entries)
}

pub struct LoadedFixtures {
    pub entries: Vec<FixtureEntry>,
    pub targets: ImageTensor<f32>,
    pub observed: ImageTensor<f32>,
    pub masks: Vec<BinaryMask>,
}

pub fn load_fixtures(dir: &Path, task: Option<Task>) -> Result<LoadedFixtures> {
    let mut entries: Vec<FixtureEntry> = read_jsonl(&dir.join(MANIFEST))?;
    if let Some(t) = task {
        entries.retain(|e| e.meta.task == t);
    }
    if entries.is_empty() {
        return Err(Error::At { path: dir.to_path_buf(), message: "no matching fixtures".into() });
    }
    let mut targets = Vec::new();
    let mut observed = Vec::new();
    let mut masks = Vec::new();
    for e in &entries {
        targets.push(read_image::<f32>(&dir.join(&e.target))?);
        observed.push(read_image::<f32>(&dir.join(&e.input))?);
        masks.push(read_mask_png(&dir.join(&e.mask))?);
    }
    Ok(LoadedFixtures { targets: ImageTensor::stack(&targets)?, observed: ImageTensor::stack(&observed)?, masks, entries })
}

/// Samples every fixture in one batched chain. Masked tasks get noise in
/// the hole and keep observed pixels outside it.
pub fn sample_fixtures(
    ck: &Checkpoint<f32>,
    fx: &LoadedFixtures,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<ImageTensor<f32>> {
    let net = ck.net()?;
    let view = params_view(&net, ck, sampling.use_ema);
    let schedule = sampling.schedule.build()?;
    let mut rng = RandomSource::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(fx.entries.len());
    let mut mask_items = Vec::with_capacity(fx.entries.len());
    for (i, (e, m)) in fx.entries.iter().zip(&fx.masks).enumerate() {
        let obs = fx.observed.item(i);
        let full = matches!(e.meta.task, Task::Colorization | Task::JpegRestoration);
        inputs.push(if full { obs } else { fill_with_noise(&obs, m, &mut rng)? });
        mask_items.push(if full { BinaryMask::ones(m.height(), m.width()).to_tensor() } else { m.to_tensor() });
    }
    let x = ImageTensor::stack(&inputs)?;
    let composite = Composite { observed: fx.observed.clone(), mask: ImageTensor::stack(&mask_items)? };
    Ok(sample(&view, &x, &schedule, &mut rng, Some(&composite), sampling.options())?)
}

pub fn write_samples(out: &Path, fx: &LoadedFixtures, samples: &ImageTensor<f32>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut paths = Vec::new();
    for (i, e) in fx.entries.iter().enumerate() {
        let p = out.join(format!("{}_sample.png", e.id));
        write_png(&p, samples, i)?;
        paths.push(p);
    }
    Ok(paths)
}

pub struct EvalOptions<'a> {
    pub checkpoint_name: String,
    pub extractor: Option<&'a SmallClassifier<f32>>,
    pub ssim: SsimConfig,
    pub seed: u64,
}

/// Metric records for each task present in the fixtures.
pub fn evaluate(ck: &Checkpoint<f32>, fx: &LoadedFixtures, sampling: &SamplingConfig, opts: &EvalOptions) -> Result<Vec<MetricRecord>> {
    let samples = sample_fixtures(ck, fx, sampling, opts.seed)?;
    let mut tasks: Vec<Task> = fx.entries.iter().map(|e| e.meta.task).collect();
    tasks.dedup();
    tasks.sort_by_key(|t| t.name());
    tasks.dedup();
    let mut out = Vec::new();
    for task in tasks {
        let idx: Vec<usize> = (0..fx.entries.len()).filter(|&i| fx.entries[i].meta.task == task).collect();
        let pick = |t: &ImageTensor<f32>| ImageTensor::stack(&idx.iter().map(|&i| t.item(i)).collect::<Vec<_>>());
        let (s, y) = (pick(&samples)?, pick(&fx.targets)?);
        let n = idx.len();
        let mut push = |metric: &str, value: f64| {
            out.push(MetricRecord {
                checkpoint: opts.checkpoint_name.clone(),
                step: ck.state.step,
                params: if sampling.use_ema { "ema" } else { "raw" }.into(),
                task: task.name().into(),
                metric: metric.into(),
                value,
                count: n,
                seed: opts.seed,
            })
        };
        push("mae", s.mean_abs_diff(&y)?);
        let ssim: f64 = (0..n).map(|i| ms_ssim_items(&s, i, &y, i, &opts.ssim)).sum::<CoreResult<f64>>()? / n as f64;
        push("ms_ssim", ssim);
        if let Some(ex) = opts.extractor {
            if n >= 2 {
                push("fid", frechet_distance(&image_stats(ex, &s)?, &image_stats(ex, &y)?)?);
            }
            push("pd", perceptual_distance(ex, &s, &y)?);
            push("is", inception_score(&ex.extract(&s)?.probabilities(), ex.num_classes())?);
            let labels: Option<Vec<usize>> = idx.iter().map(|&i| fx.entries[i].label).collect();
            if let Some(l) = labels {
                push("ca", classification_accuracy(ex, &s, &l)?);
            }
        }
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, records: &[MetricRecord]) -> Result<String> {
    write_jsonl(path, records)?;
    Ok(metric_table(records))
}

pub fn load_extractor_opt(path: Option<&Path>) -> Result<Option<SmallClassifier<f32>>> {
    path.map(load_extractor).transpose()
}

pub fn train_extractor(toy: &ToyColorization, images: usize, recipe: &ClassifierTraining, seed: u64, out: &Path) -> Result<f64> {
    let mut rng = RandomSource::seed_from_u64(seed);
    let (imgs, labels) = ImageSampler::<f32>::sample_images(toy, images, &mut rng)?;
    let mut clf = SmallClassifier::<f32>::new(ClassifierConfig { num_classes: toy.modes(), ..Default::default() }, &mut rng)?;
    let loss = clf.train(&imgs, &labels.unwrap_or_default(), recipe, &mut rng)?;
    save_extractor(out, &clf)?;
    Ok(loss)
}

pub fn panorama(
    ck: &Checkpoint<f32>,
    seed_image: &ImageTensor<f32>,
    sampling: &SamplingConfig,
    direction: Direction,
    n_steps: usize,
    step_fraction: f64,
    seed: u64,
) -> Result<ImageTensor<f32>> {
    let net = ck.net()?;
    let view = params_view(&net, ck, sampling.use_ema);
    let cfg = PanoramaConfig { direction, n_steps, step_fraction, sample_options: sampling.options() };
    let mut rng = RandomSource::seed_from_u64(seed);
    Ok(panorama_uncrop(&view, seed_image, &sampling.schedule.build()?, &cfg, &mut rng)?.canvas)
}

pub fn diversity(cfg: &ToyStudyConfig, mut log: impl FnMut(&str, &StepReport)) -> Result<ToyStudyReport> {
    let net = UNet::new(cfg.model.clone())?;
    let models = train_study_models(cfg, &net, &mut log)?;
    let eval = EvalSet::new(cfg)?;
    evaluate_study(cfg, &net, &models, &eval)
}
