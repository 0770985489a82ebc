//! Run configuration read from TOML, with dotted `key=value` overrides.
//!
//! ```toml
//! [data]
//! source = "toy"            # or "folder"
//! path = "images"           # folder source; relative paths resolve
//!                           # against $PALETTE_DATA_ROOT when set
//! policy = "largest_square_resize"
//! size = 64
//! on_error = "fatal"
//!
//! [toy]                     # synthetic colorization data
//! size = 8
//! priors = [0.6, 0.25, 0.15]
//!
//! [model]                   # network architecture
//! base_channels = 16
//! channel_multipliers = [1, 2, 4]
//!
//! [train]
//! batch_size = 16
//! total_steps = 10000
//! tasks = ["colorization"]
//!
//! [sampling]
//! schedule = { beta_start = 1e-4, beta_end = 0.09, steps = 1000 }
//! use_ema = true
//! ```

use std::path::{Path, PathBuf};

use palette_core::denoiser::ArchitectureConfig;
use palette_core::diffusion::SampleOptions;
use palette_core::schedule::LinearScheduleParams;
use palette_core::tasks::BrushParams;
use palette_core::toy::ToyColorization;
use palette_core::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{CropPolicy, OnError};
use crate::error::{Error, Result};

pub const DATA_ROOT_ENV: &str = "PALETTE_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Toy,
    Folder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub policy: CropPolicy,
    pub size: u32,
    pub on_error: OnError,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source: DataSource::Toy, path: None, policy: CropPolicy::LargestSquareResize, size: 64, on_error: OnError::Fatal }
    }
}

impl DataConfig {
    /// The folder path, resolved against the data root variable when relative.
    pub fn resolved_path(&self) -> Result<PathBuf> {
        let p = self.path.as_ref().ok_or_else(|| Error::Config("data.path is required for a folder source".into()))?;
        Ok(resolve_data_path(p, std::env::var_os(DATA_ROOT_ENV).as_deref().map(Path::new)))
    }
}

pub fn resolve_data_path(p: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if p.is_relative() => r.join(p),
        _ => p.to_path_buf(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub schedule: LinearScheduleParams,
    pub use_ema: bool,
    pub clip_final: bool,
    pub clip_denoised: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { schedule: LinearScheduleParams::INFERENCE, use_ema: true, clip_final: true, clip_denoised: true }
    }
}

impl SamplingConfig {
    pub fn options(&self) -> SampleOptions {
        SampleOptions { clip_final: self.clip_final, clip_denoised: self.clip_denoised }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub toy: ToyColorization,
    pub model: ArchitectureConfig,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
    pub brush: BrushParams,
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let cfg: RunConfig = layered(text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides).map_err(|e| e.context(path))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.sampling.schedule.build()?;
        if self.data.source == DataSource::Toy {
            self.toy.validate()?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Reads `T` from its serialized defaults, overlaid with `text` and then
/// with each override in order. Nested tables merge key by key.
pub fn layered<T: Serialize + DeserializeOwned + Default>(text: &str, overrides: &[String]) -> Result<T> {
    let mut table = toml::Table::try_from(T::default()).map_err(|e| Error::Config(e.to_string()))?;
    let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    merge(&mut table, user);
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`; the value is parsed as a TOML literal and falls
/// back to a string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = parse_literal(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("override key `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
