//! Run configuration file.
//!
//! ```toml
//! seed = 1
//!
//! [data]
//! path = "synth.csv"                 # relative paths resolve against this file
//! schema = "synth.schema.toml"
//! # unlabeled_path = "pool.csv"      # deployment mode: `path` is the labeled set
//!
//! [split]        # labeled_fraction, validation_fraction
//! [model]        # filters, kernel_sizes, pool_width, pool_stride, dense_width,
//!                # batch_size, epochs, patience, [model.optimizer]
//! [augment]      # noise_scale
//! [curriculum]   # t_start, t_end, t_step, max_iterations, finetune_epochs
//! [ssl]          # consistency_weight, threshold_percentile
//! [metrics]      # averaging = "macro" | "micro"
//! ```
//!
//! Every sub-seed derives from `seed`. Command-line flags override file values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::metrics::Averaging;
use crate::ssl::{CruplConfig, CurriculumConfig, SslConfig};
use crate::tempcnn::TempCnnConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlabeled_path: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub averaging: Averaging,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: TempCnnConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub curriculum: CurriculumConfig,
    #[serde(default)]
    pub ssl: SslConfig,
    #[serde(default)]
    pub metrics: MetricsSection,
    /// Directory relative data paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub curriculum_cap: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(c) = o.curriculum_cap {
            self.curriculum.max_iterations = c;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.augment.validate()?;
        self.curriculum.validate()?;
        self.ssl.validate()?;
        self.model.optimizer.validate()
    }

    /// Canonical TOML of the effective configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            seed: self.seed.wrapping_add(2),
            ..self.split.clone()
        }
    }

    pub fn crupl(&self) -> CruplConfig {
        CruplConfig {
            model: TempCnnConfig {
                seed: self.seed,
                ..self.model.clone()
            },
            augment: AugmentConfig {
                seed: self.seed.wrapping_add(1),
                ..self.augment.clone()
            },
            curriculum: self.curriculum.clone(),
            ssl: self.ssl.clone(),
            averaging: self.metrics.averaging,
        }
    }
}
