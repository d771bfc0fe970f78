//! Run manifests written next to generated artifacts.

use std::path::Path;

use anyhow::{Context as _, Result};
use hires_core::diffusion::PipelineConfig;
use serde::{Deserialize, Serialize};

pub const ARTIFACT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_NOTE: &str =
    "stage seconds cover the denoising loop only; decoding and file output are excluded";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub index: usize,
    pub scale: usize,
    pub height: usize,
    pub width: usize,
    pub seconds: f64,
    pub latent: String,
    pub image: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: u32,
    pub seed: u64,
    pub config: PipelineConfig,
    pub stages: Vec<StageEntry>,
    /// Every file the run wrote, relative to the output directory.
    pub files: Vec<String>,
    pub timing: String,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
