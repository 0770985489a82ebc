//! File formats, datasets, experiment drivers and the command-line front end
//! for `palette-core`.

pub mod app;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod extractor_io;
pub mod imageio;
pub mod records;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
