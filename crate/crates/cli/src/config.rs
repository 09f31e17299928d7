//! The TOML run configuration.
//!
//! Sections mirror the library structs field for field:
//!
//! ```toml
//! threads = 1
//!
//! [paths]      # data, splits, checkpoint, out
//! [model]      # ModelConfig
//! [generate]   # GenSpec
//! [train]      # TrainConfig (its `task` also picks the labels `generate` writes)
//! [eval]       # EvalOptions
//! [verify]     # SuiteConfig
//! ```
//!
//! Every section is optional and unknown keys are errors.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use chiralnet::model::ModelConfig;
use chiralnet::synthgen::GenSpec;
use chiralnet::training::{EvalOptions, TrainConfig};
use chiralnet::verify::SuiteConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Input dataset (JSON lines or SDF).
    pub data: Option<PathBuf>,
    /// Split manifest; defaults to the `splits` entry of `<data>.meta.json`.
    pub splits: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Caps worker threads everywhere; overrides the per-section values.
    pub threads: Option<usize>,
    pub paths: Paths,
    pub model: ModelConfig,
    pub generate: GenSpec,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub verify: SuiteConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("{e}"))
    }

    /// Fills unset training values from the task table and spreads the
    /// thread cap into every section.
    pub fn resolve(mut self) -> Self {
        self.train = self.train.resolved();
        if let Some(t) = self.threads {
            let t = t.max(1);
            self.train.threads = t;
            self.eval.threads = t;
            self.verify.threads = t;
        }
        self
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str, flag: &str) -> anyhow::Result<&'a Path> {
        value.as_deref().ok_or_else(|| anyhow!("missing required path `paths.{key}` (set it in [paths] or pass {flag})"))
    }
}
