//! The multi-modal toy study: L2 and L1 diffusion models and a regression
//! baseline trained on synthetic colorization, then scored for quality and
//! sample diversity.

use palette_core::denoiser::{ArchitectureConfig, ModelView, UNet};
use palette_core::diffusion::SampleOptions;
use palette_core::diversity::{compare, draw_sample_sets, score_sample_sets, Comparison, DiversityConfig, ModelDiversity};
use palette_core::metrics::{
    embedding_distance, frechet_distance, image_stats, ClassifierConfig, ClassifierTraining, FeatureExtractor, FeatureStats,
    SmallClassifier, SsimConfig,
};
use palette_core::schedule::LinearScheduleParams;
use palette_core::tasks::{to_grayscale, BrushParams, Corruptor, Task};
use palette_core::toy::{ImageSampler, ToyColorization};
use palette_core::train::{regression_predict, Objective, StepReport, TaskBatches, TrainConfig, TrainState, Trainer};
use palette_core::{ImageTensor, RandomSource};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyStudyConfig {
    pub toy: ToyColorization,
    pub model: ArchitectureConfig,
    /// Shared recipe; loss norm and objective are set per model.
    pub train: TrainConfig,
    pub inference: LinearScheduleParams,
    pub eval_inputs: usize,
    pub samples_per_input: usize,
    /// Inputs sampled from the untrained network for the quality baseline.
    pub untrained_inputs: usize,
    pub reference_size: usize,
    pub classifier: ClassifierConfig,
    pub classifier_training: ClassifierTraining,
    pub classifier_images: usize,
    pub ssim: SsimConfig,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for ToyStudyConfig {
    fn default() -> Self {
        Self {
            toy: ToyColorization::default(),
            model: ArchitectureConfig {
                base_channels: 16,
                channel_multipliers: vec![1, 2, 4],
                attention_levels: vec![1, 2],
                ..ArchitectureConfig::default()
            },
            train: TrainConfig {
                batch_size: 16,
                total_steps: 10_000,
                learning_rate: 5e-4,
                warmup_steps: 500,
                ema_decay: 0.999,
                tasks: vec![Task::Colorization],
                schedule: LinearScheduleParams::TRAINING,
                ..TrainConfig::default()
            },
            inference: LinearScheduleParams::INFERENCE,
            eval_inputs: 96,
            samples_per_input: 6,
            untrained_inputs: 16,
            reference_size: 2000,
            classifier: ClassifierConfig::default(),
            classifier_training: ClassifierTraining::default(),
            classifier_images: 2000,
            ssim: SsimConfig { window: 3, sigma: 1.0, ..SsimConfig::default() },
            bootstrap_resamples: 2000,
            confidence: 0.95,
            seed: 0,
        }
    }
}

impl ToyStudyConfig {
    pub fn diversity(&self) -> DiversityConfig {
        DiversityConfig {
            samples_per_input: self.samples_per_input,
            ssim: self.ssim.clone(),
            bootstrap_resamples: self.bootstrap_resamples,
            confidence: self.confidence,
            sample_options: SampleOptions { clip_final: true, clip_denoised: true },
            ..DiversityConfig::default()
        }
    }

    pub fn train_config(&self, loss_p: u32, objective: Objective, seed: u64) -> TrainConfig {
        TrainConfig { loss_p, objective, seed, ..self.train.clone() }
    }
}

/// Trains one toy model from scratch. `progress` sees every step.
pub fn train_toy_model(
    net: &UNet,
    toy: &ToyColorization,
    config: TrainConfig,
    progress: impl FnMut(&StepReport),
) -> Result<TrainState<f32>> {
    let trainer = Trainer::new(net, config)?;
    let source = TaskBatches { images: toy.clone(), tasks: trainer.config.tasks.clone(), corruptor: Corruptor::new(BrushParams::default(), None) };
    let mut state = TrainState::new(net, trainer.config.seed);
    trainer.run(&mut state, &source, trainer.config.total_steps, progress)?;
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    pub name: String,
    pub fid: f64,
    pub perceptual_distance: f64,
    /// Fraction of outputs the extractor assigns to each chroma mode.
    pub mode_frequencies: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyStudyReport {
    pub l2: ModelDiversity,
    pub l1: ModelDiversity,
    /// `l2 - l1`.
    pub comparison: Comparison,
    pub l2_modes: Vec<f64>,
    pub l1_modes: Vec<f64>,
    pub untrained: BaselineScores,
    pub regression: BaselineScores,
    /// FID of the L2 model relative to the untrained network.
    pub fid_ratio: f64,
    pub reference_self_fid: f64,
}

/// Trained extractor, reference statistics and evaluation inputs shared by
/// every model in the study.
pub struct EvalSet {
    pub extractor: SmallClassifier<f32>,
    pub reference: FeatureStats,
    pub reference_self_fid: f64,
    pub targets: ImageTensor<f32>,
    pub inputs: ImageTensor<f32>,
}

impl EvalSet {
    pub fn new(cfg: &ToyStudyConfig) -> Result<Self> {
        let root = RandomSource::seed_from_u64(cfg.seed ^ 0x5eed);
        let mut rng = root.fork(0);
        let (imgs, labels) = ImageSampler::<f32>::sample_images(&cfg.toy, cfg.classifier_images, &mut rng)?;
        let mut extractor = SmallClassifier::new(cfg.classifier.clone(), &mut rng)?;
        extractor.train(&imgs, &labels.unwrap_or_default(), &cfg.classifier_training, &mut rng)?;
        let mut rng = root.fork(1);
        let (reference_imgs, _) = ImageSampler::<f32>::sample_images(&cfg.toy, cfg.reference_size, &mut rng)?;
        let reference = image_stats(&extractor, &reference_imgs)?;
        let (more, _) = ImageSampler::<f32>::sample_images(&cfg.toy, cfg.reference_size, &mut rng)?;
        let reference_self_fid = frechet_distance(&image_stats(&extractor, &more)?, &reference)?;
        let (targets, _) = ImageSampler::<f32>::sample_images(&cfg.toy, cfg.eval_inputs, &mut root.fork(2))?;
        let inputs = to_grayscale(&targets)?;
        Ok(Self { extractor, reference, reference_self_fid, targets, inputs })
    }

    pub fn mode_frequencies(&self, images: &ImageTensor<f32>) -> Result<Vec<f64>> {
        let preds = self.extractor.extract(images)?.predictions();
        let mut f = vec![0.0; self.extractor.num_classes()];
        for p in &preds {
            f[*p] += 1.0 / preds.len() as f64;
        }
        Ok(f)
    }
}

pub struct TrainedModels {
    pub l2: TrainState<f32>,
    pub l1: TrainState<f32>,
    pub regression: TrainState<f32>,
}

pub fn train_study_models(cfg: &ToyStudyConfig, net: &UNet, mut progress: impl FnMut(&str, &StepReport)) -> Result<TrainedModels> {
    let l2 = train_toy_model(net, &cfg.toy, cfg.train_config(2, Objective::Diffusion, cfg.seed), |r| progress("l2", r))?;
    let l1 = train_toy_model(net, &cfg.toy, cfg.train_config(1, Objective::Diffusion, cfg.seed), |r| progress("l1", r))?;
    let regression = train_toy_model(net, &cfg.toy, cfg.train_config(2, Objective::Regression, cfg.seed), |r| progress("regression", r))?;
    Ok(TrainedModels { l2, l1, regression })
}

/// Scores trained models. EMA parameters are used throughout.
pub fn evaluate_study(cfg: &ToyStudyConfig, net: &UNet, models: &TrainedModels, eval: &EvalSet) -> Result<ToyStudyReport> {
    let schedule = cfg.inference.build()?;
    let dcfg = cfg.diversity();
    let root = RandomSource::seed_from_u64(cfg.seed ^ 0xd1ce);
    let score = |name: &str, state: &TrainState<f32>, stream: u64| -> Result<(ModelDiversity, Vec<f64>)> {
        let view = state.ema_view(net);
        let sets = draw_sample_sets(&view, &eval.inputs, cfg.samples_per_input, &schedule, dcfg.sample_options, &mut root.fork(stream))?;
        let scores = score_sample_sets(name, &sets, &eval.targets, &eval.reference, &eval.extractor, &dcfg)?;
        Ok((scores, eval.mode_frequencies(&ImageTensor::stack(&sets)?)?))
    };
    let (l2, l2_modes) = score("l2", &models.l2, 0)?;
    let (l1, l1_modes) = score("l1", &models.l1, 1)?;
    let comparison = compare(&l2, &l1, &dcfg, &mut root.fork(2))?;

    // Untrained network with the same initialization as the trained models.
    let fresh = TrainState::<f32>::new(net, cfg.seed);
    let n = cfg.untrained_inputs.min(eval.inputs.shape().n);
    let view = ModelView { net, params: &fresh.params };
    let sets = draw_sample_sets(&view, &eval.inputs.slice(0, n), cfg.samples_per_input, &schedule, dcfg.sample_options, &mut root.fork(3))?;
    let u = score_sample_sets("untrained", &sets, &eval.targets.slice(0, n), &eval.reference, &eval.extractor, &dcfg)?;
    let untrained = BaselineScores {
        name: "untrained".into(),
        fid: u.fid,
        perceptual_distance: u.perceptual_distance,
        mode_frequencies: eval.mode_frequencies(&ImageTensor::stack(&sets)?)?,
    };

    let pred = regression_predict(&models.regression.ema_view(net), &eval.inputs)?.clamp(-1.0, 1.0);
    let fe = eval.extractor.extract(&pred)?;
    let regression = BaselineScores {
        name: "regression".into(),
        fid: frechet_distance(&image_stats(&eval.extractor, &pred)?, &eval.reference)?,
        perceptual_distance: embedding_distance(&fe, &eval.extractor.extract(&eval.targets)?)?,
        mode_frequencies: eval.mode_frequencies(&pred)?,
    };
    Ok(ToyStudyReport {
        fid_ratio: l2.fid / untrained.fid,
        l2,
        l1,
        comparison,
        l2_modes,
        l1_modes,
        untrained,
        regression,
        reference_self_fid: eval.reference_self_fid,
    })
}
