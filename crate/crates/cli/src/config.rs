//! TOML run configuration. Every field is optional; command-line flags
//! override config values, which override built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub adaptive: AdaptiveConfig,
    #[serde(default)]
    pub beam: BeamConfig,
    #[serde(default)]
    pub engine: EngineConfig,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// "mock" or "http".
    pub kind: Option<String>,
    pub script: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub relevance: Option<f64>,
    pub grounding: Option<f64>,
    pub utility: Option<f64>,
    pub include_seq: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    /// "minp", "meanp" or "ret".
    pub method: Option<String>,
    pub gamma: Option<f64>,
    pub flip: Option<bool>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub size: Option<usize>,
    pub depth: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// "single-hop" or "multi-hop".
    pub template: Option<String>,
    pub top_n: Option<usize>,
    pub eos: Option<String>,
    pub continue_expansion: Option<bool>,
    /// "sum" or "mean".
    pub cumulative: Option<String>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::config(format!("--config: cannot read {}: {e}", path.display()))
    })?;
    toml::from_str(&text)
        .map_err(|e| CliError::config(format!("--config {}: {e}", path.display())))
}

/// Flag wins, then config, then the built-in default.
pub fn resolve<T: Clone>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

pub fn resolve_opt<T: Clone>(flag: Option<T>, config: Option<T>) -> Option<T> {
    flag.or(config)
}
