//! Single-file model checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::evaluation::PredictionSet;
use crate::net::{BaselineModel, DamfModel, DomainRegistry};
use crate::training::{predict_baseline, predict_damf, test_domain_index};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SavedModel {
    Damf(DamfModel),
    Baseline(BaselineModel),
}

/// Encoder parameters, transformation layer, heads and domain registry in
/// one JSON document, tagged with the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub class_names: Vec<String>,
    pub model: SavedModel,
}

impl Checkpoint {
    pub fn new(config_hash: impl Into<String>, model: SavedModel) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config_hash: config_hash.into(),
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "{}: checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                path.display(),
                ckpt.format_version
            )));
        }
        if ckpt.class_names != CLASS_NAMES {
            return Err(Error::invalid(format!(
                "{}: checkpoint class order {:?} differs from {:?}",
                path.display(),
                ckpt.class_names,
                CLASS_NAMES
            )));
        }
        Ok(ckpt)
    }

    pub fn domains(&self) -> Option<&DomainRegistry> {
        match &self.model {
            SavedModel::Damf(m) => Some(&m.domains),
            SavedModel::Baseline(_) => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.model {
            SavedModel::Damf(_) => "damf",
            SavedModel::Baseline(_) => "baseline",
        }
    }

    /// Predictions on the labeled documents of `corpus`. A DAMF model uses
    /// the domain slot registered under the corpus name, or the last slot.
    pub fn predict(&self, corpus: &Corpus) -> Result<PredictionSet> {
        match &self.model {
            SavedModel::Damf(m) => predict_damf(m, corpus, test_domain_index(m, &corpus.name)),
            SavedModel::Baseline(m) => predict_baseline(m, corpus),
        }
    }
}
