use std::path::Path;

use handcast_core::config::{DiffusionConfig, ModelConfig, TrainingConfig};
use handcast_core::data::store::read_json;
use handcast_core::data::SynthConfig;
use handcast_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Clip counts per split written by `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 200,
            val: 0,
            test: 50,
        }
    }
}

/// Everything a run can be configured with; every section is optional in
/// the JSON file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub splits: SplitCounts,
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub training: TrainingConfig,
    pub eval: EvalSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Probability at or above which a frame counts as contact.
    pub threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

impl RunConfig {
    /// A config that cannot be read is an I/O error; one that does not parse
    /// is the caller's mistake and reported as a config error.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => read_json(p).map_err(|e| match e {
                Error::Format { path, message } => {
                    Error::Config(format!("{}: {message}", path.display()))
                }
                other => other,
            }),
            None => Ok(Self::default()),
        }
    }
}
