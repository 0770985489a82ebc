//! JSON persistence of the feature-extractor classifier.

use std::path::Path;

use palette_core::autodiff::ParamStore;
use palette_core::metrics::{ClassifierConfig, SmallClassifier};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExtractorFile {
    config: ClassifierConfig,
    params: Vec<TensorRecord>,
}

pub fn save_extractor(path: &Path, clf: &SmallClassifier<f32>) -> Result<()> {
    let file = ExtractorFile {
        config: clf.config().clone(),
        params: clf.params.iter().map(|p| TensorRecord { name: p.name.clone(), shape: p.shape.clone(), data: p.data.clone() }).collect(),
    };
    std::fs::write(path, serde_json::to_vec(&file)?).map_err(|e| Error::io(path, e))
}

pub fn load_extractor(path: &Path) -> Result<SmallClassifier<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: ExtractorFile = serde_json::from_slice(&bytes).map_err(|e| Error::from(e).context(path))?;
    let mut store = ParamStore::new();
    for t in file.params {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::At { path: path.to_path_buf(), message: format!("tensor {} has wrong length", t.name) });
        }
        store.add(t.name, t.shape, t.data);
    }
    SmallClassifier::from_params(file.config, store).map_err(|e| Error::from(e).context(path))
}
