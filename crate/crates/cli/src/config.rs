//! Pipeline config loading: files, shipped presets, and validation.

use std::fmt;
use std::path::Path;

use hires_core::diffusion::PipelineConfig;

pub const PRESETS: [(&str, &str); 2] = [
    ("sdxl-like", include_str!("../presets/sdxl-like.json")),
    ("flux-like", include_str!("../presets/flux-like.json")),
];

/// A config that failed to load or validate. Maps to exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Parses JSON text, reporting the key path of the first problem.
pub fn parse_config(text: &str) -> Result<PipelineConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            ConfigError(inner.to_string())
        } else {
            ConfigError(format!("{path}: {inner}"))
        }
    })?;
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

pub fn preset(name: &str) -> Result<PipelineConfig, ConfigError> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        let names: Vec<_> = PRESETS.iter().map(|(n, _)| *n).collect();
        ConfigError(format!("preset: unknown preset {name:?}; available: {}", names.join(", ")))
    })?;
    parse_config(text)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("config: cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Resolves `--config` / `--preset`, then applies a `--seed` override.
pub fn resolve(
    config: Option<&Path>,
    preset_name: Option<&str>,
    seed: Option<u64>,
) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = match (config, preset_name) {
        (Some(p), None) => load_config(p)?,
        (None, Some(n)) => preset(n)?,
        (Some(_), Some(_)) => return Err(ConfigError("config: give either --config or --preset, not both".into())),
        (None, None) => return Err(ConfigError("config: one of --config or --preset is required".into())),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}
