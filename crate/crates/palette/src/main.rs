use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use palette::app::{self, EvalOptions, TrainOptions};
use palette::config::{RunConfig, SamplingConfig};
use palette::experiment::ToyStudyConfig;
use palette::imageio::{read_image, write_png};
use palette::Checkpoint;
use palette_core::metrics::{ClassifierTraining, SsimConfig};
use palette_core::panorama::Direction;
use palette_core::tasks::Task;

#[derive(Parser)]
#[command(name = "palette", version, about = "Conditional diffusion for image-to-image tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.total_steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random draw of the run.
    #[arg(long)]
    seed: u64,
}

impl Common {
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p, &self.overrides)?,
            None => RunConfig::from_toml("", &self.overrides)?,
        };
        cfg.train.seed = self.seed;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SampleFlags {
    /// Use raw parameters instead of the averaged ones.
    #[arg(long)]
    raw: bool,
}

impl SampleFlags {
    fn sampling(&self, cfg: &RunConfig) -> SamplingConfig {
        SamplingConfig { use_ema: !self.raw && cfg.sampling.use_ema, ..cfg.sampling.clone() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop at this step (the checkpoint can be resumed).
        #[arg(long)]
        until: Option<u64>,
        #[arg(long, default_value_t = 100)]
        log_every: u64,
        #[arg(long)]
        save_every: Option<u64>,
    },
    /// Sample outputs for a fixture set.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: SampleFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a fixture set and write metric records.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: SampleFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        /// Classifier used for the feature-based metrics.
        #[arg(long)]
        extractor: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grow a panorama from one image by repeated uncropping.
    Panorama {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: SampleFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Applications per side.
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        #[arg(long, default_value = "both", value_parser = parse_direction)]
        direction: Direction,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train L2, L1 and regression models on the toy task and report
    /// quality and diversity.
    Diversity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write frozen evaluation examples and their manifest.
    MakeFixtures {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_task)]
        task: Task,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the feature-extractor classifier on toy data.
    TrainExtractor {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2000)]
        images: usize,
        #[arg(long, default_value_t = 600)]
        steps: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::parse(s).map_err(|e| e.to_string())
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    match s {
        "left" => Ok(Direction::Left),
        "right" => Ok(Direction::Right),
        "both" => Ok(Direction::Both),
        _ => Err(format!("unknown direction `{s}` (left, right, both)")),
    }
}

fn name_of(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { common, out, resume, until, log_every, save_every } => {
            let cfg = common.run_config()?;
            let opts = TrainOptions { out: out.clone(), resume, until, log_every, save_every };
            let ck = app::train(&cfg, &opts, |r| eprintln!("step {} loss {:.6} lr {:.3e}", r.step, r.loss, r.learning_rate))?;
            eprintln!("wrote {} at step {}", out.display(), ck.state.step);
        }
        Command::Sample { common, flags, checkpoint, fixtures, task, out } => {
            let cfg = common.run_config()?;
            let ck = Checkpoint::<f32>::load(&checkpoint)?;
            let fx = app::load_fixtures(&fixtures, task)?;
            let samples = app::sample_fixtures(&ck, &fx, &flags.sampling(&cfg), common.seed)?;
            let paths = app::write_samples(&out, &fx, &samples)?;
            eprintln!("wrote {} samples to {}", paths.len(), out.display());
        }
        Command::Eval { common, flags, checkpoint, fixtures, task, extractor, out } => {
            let cfg = common.run_config()?;
            let ck = Checkpoint::<f32>::load(&checkpoint)?;
            let fx = app::load_fixtures(&fixtures, task)?;
            let ex = app::load_extractor_opt(extractor.as_deref())?;
            let opts = EvalOptions {
                checkpoint_name: name_of(&checkpoint),
                extractor: ex.as_ref(),
                ssim: SsimConfig { window: 3, sigma: 1.0, ..SsimConfig::default() },
                seed: common.seed,
            };
            let records = app::evaluate(&ck, &fx, &flags.sampling(&cfg), &opts)?;
            print!("{}", app::write_metrics(&out, &records)?);
        }
        Command::Panorama { common, flags, checkpoint, input, steps, fraction, direction, out } => {
            let cfg = common.run_config()?;
            let ck = Checkpoint::<f32>::load(&checkpoint)?;
            let seed_image = read_image::<f32>(&input)?;
            let pano = app::panorama(&ck, &seed_image, &flags.sampling(&cfg), direction, steps, fraction, common.seed)?;
            write_png(&out, &pano, 0)?;
            eprintln!("wrote {}x{} panorama to {}", pano.shape().w, pano.shape().h, out.display());
        }
        Command::Diversity { common, out } => {
            let text = match &common.config {
                Some(p) => std::fs::read_to_string(p).with_context(|| p.display().to_string())?,
                None => String::new(),
            };
            let mut cfg: ToyStudyConfig = palette::config::layered(&text, &common.overrides)?;
            cfg.seed = common.seed;
            let report = app::diversity(&cfg, |name, r| {
                if r.step % 500 == 0 {
                    eprintln!("{name} step {} loss {:.6}", r.step, r.loss);
                }
            })?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)?).with_context(|| out.display().to_string())?;
            println!(
                "l2: fid {:.4} pd {:.4} diversity {:.4} ms-ssim {:.4}\nl1: fid {:.4} pd {:.4} diversity {:.4} ms-ssim {:.4}\nregression: fid {:.4} pd {:.4}\nuntrained: fid {:.4}",
                report.l2.fid,
                report.l2.perceptual_distance,
                report.l2.feature_diversity,
                report.l2.msssim_mean,
                report.l1.fid,
                report.l1.perceptual_distance,
                report.l1.feature_diversity,
                report.l1.msssim_mean,
                report.regression.fid,
                report.regression.perceptual_distance,
                report.untrained.fid
            );
        }
        Command::MakeFixtures { common, task, count, out } => {
            let cfg = common.run_config()?;
            if count == 0 {
                bail!("--count must be positive");
            }
            let entries = app::make_fixtures(&cfg, task, count, common.seed, &out)?;
            eprintln!("wrote {} fixtures to {}", entries.len(), out.display());
        }
        Command::TrainExtractor { common, images, steps, out } => {
            let cfg = common.run_config()?;
            let recipe = ClassifierTraining { steps, ..ClassifierTraining::default() };
            let loss = app::train_extractor(&cfg.toy, images, &recipe, common.seed, &out)?;
            eprintln!("final loss {loss:.5}; wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
