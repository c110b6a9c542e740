use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cv::FoldScheme;
use super::preprocess::PreprocessConfig;
use super::tasks::TaskOptions;
use super::train::{ModelKind, TrainConfig};
use super::HarnessError;
use crate::model::ModelConfig;
use crate::signalio::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalSection {
    pub scheme: SchemeName,
    /// Fold count of the k-fold scheme.
    pub k: usize,
    pub kind: ModelKind,
    pub seed: u64,
    pub workers: usize,
}

impl Default for CrossvalSection {
    fn default() -> Self {
        Self {
            scheme: SchemeName::KFold,
            k: 5,
            kind: ModelKind::Fused,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    KFold,
    Loso,
}

impl CrossvalSection {
    pub fn fold_scheme(&self) -> FoldScheme {
        match self.scheme {
            SchemeName::KFold => FoldScheme::KFold { k: self.k },
            SchemeName::Loso => FoldScheme::Loso,
        }
    }
}

pub type TaskSection = TaskOptions;

/// Everything a command-line run reads from its `--config` file. Every
/// section and field is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub task: TaskSection,
    pub crossval: CrossvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration serialises")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.synth.validate()?;
        self.model
            .validate()
            .map_err(|e| HarnessError::Config(format!("model: {e}")))?;
        self.train.validate()?;
        if self.crossval.scheme == SchemeName::KFold && self.crossval.k < 2 {
            return Err(HarnessError::Config(format!(
                "crossval.k must be at least 2, got {}",
                self.crossval.k
            )));
        }
        Ok(())
    }

    /// Applies a `--seed` override to every seeded section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self.crossval.seed = seed;
        self
    }
}
