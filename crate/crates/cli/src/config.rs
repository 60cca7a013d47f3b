//! Run configuration file. Every key is optional; command-line flags take
//! precedence over file values, which take precedence over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub link: Option<String>,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub infer: InferSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub samples: Option<usize>,
    pub communities: Option<usize>,
    pub p_in: Option<f64>,
    pub p_out: Option<f64>,
    pub planted: Option<usize>,
    pub signal: Option<f64>,
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub alpha: Option<f64>,
    pub temperature: Option<f64>,
    pub beta_graph: Option<f64>,
    pub sigma_x: Option<f64>,
    pub patience: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InferSection {
    pub samples: Option<usize>,
    pub densities: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub densities: Option<Vec<f64>>,
    pub validation: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
