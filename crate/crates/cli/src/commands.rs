//! Subcommand bodies, independent of argument parsing.

use std::path::Path;

use anyhow::{Context as _, Result};
use hires_core::diffusion::{run_pipeline, PipelineConfig};
use hires_core::flops::{analytic_flops, FlopsParams, Method, CSV_HEADER};
use hires_core::io::{save_p6, save_spt};
use hires_core::{Run, Tensor};
use serde::{Deserialize, Serialize};

use crate::manifest::{RunManifest, StageEntry, ARTIFACT_VERSION, MANIFEST_FILE, TIMING_NOTE};

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Runs the pipeline and writes per-stage latents, pixmaps and a manifest into `out`.
pub fn generate(cfg: &PipelineConfig, out: &Path) -> Result<(RunManifest, Run)> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let run = run_pipeline::<f64>(cfg)?;
    let mut stages = Vec::new();
    let mut files = Vec::new();
    for st in &run.stages {
        let latent = format!("stage{}_latent.spt", st.index);
        let image = format!("stage{}.ppm", st.index);
        save_spt(&st.latent, out.join(&latent))?;
        let sidecar = save_p6(&st.image, out.join(&image))?;
        files.extend([latent.clone(), image.clone(), file_name(&sidecar)]);
        stages.push(StageEntry {
            index: st.index,
            scale: st.scale,
            height: st.latent.height(),
            width: st.latent.width(),
            seconds: st.seconds.max(0.0),
            latent,
            image,
        });
    }
    files.push(MANIFEST_FILE.to_string());
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION,
        seed: cfg.seed,
        config: cfg.clone(),
        stages,
        files,
        timing: TIMING_NOTE.to_string(),
    };
    manifest.write(out)?;
    Ok((manifest, run))
}

/// CSV text for all three methods, one row each.
pub fn flops_csv(params: FlopsParams, as_flops: bool) -> String {
    let mut text = format!("{CSV_HEADER}\n");
    for m in Method::ALL {
        let r = analytic_flops(m, params);
        let r = if as_flops { r.to_flops() } else { r };
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    text
}

pub const ABLATION_FILE: &str = "ablation.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub name: String,
    pub lfm_enabled: bool,
    pub sg_enabled: bool,
    pub dir: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
    pub shared_stage0: bool,
    /// Pairs of runs whose final latents are bitwise equal.
    pub identical_pairs: Vec<(String, String)>,
    /// Max-abs distance between the low bands of the all-off and all-on finals.
    pub low_band_distance: f64,
}

impl AblationReport {
    pub fn passed(&self) -> bool {
        self.shared_stage0 && self.identical_pairs.is_empty()
    }
}

pub const ABLATION_GRID: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

/// Runs the LFM × SG grid with a shared seed, one subdirectory per run.
pub fn ablate(cfg: &PipelineConfig, out: &Path) -> Result<AblationReport> {
    let mut runs = Vec::new();
    let mut firsts: Vec<Tensor> = Vec::new();
    let mut finals: Vec<Tensor> = Vec::new();
    for (lfm, sg) in ABLATION_GRID {
        let name = format!("lfm_{}_sg_{}", on_off(lfm), on_off(sg));
        let mut c = cfg.clone();
        c.lfm_enabled = lfm;
        c.sg_enabled = sg;
        let (_, run) = generate(&c, &out.join(&name))?;
        firsts.push(run.stages[0].latent.clone());
        finals.push(run.final_latent().clone());
        runs.push(AblationRun {
            name: name.clone(),
            lfm_enabled: lfm,
            sg_enabled: sg,
            dir: name,
        });
    }
    let mut identical_pairs = Vec::new();
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            if finals[i] == finals[j] {
                identical_pairs.push((runs[i].name.clone(), runs[j].name.clone()));
            }
        }
    }
    let low_a = finals[0].low_pass(cfg.freq_ratio)?;
    let low_b = finals[3].low_pass(cfg.freq_ratio)?;
    let report = AblationReport {
        shared_stage0: firsts.iter().all(|f| f == &firsts[0]),
        identical_pairs,
        low_band_distance: low_a.max_abs_diff(&low_b)?,
        runs,
    };
    std::fs::write(out.join(ABLATION_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flops_csv_has_three_rows_matching_the_formulas() {
        let text = flops_csv(FlopsParams::default(), false);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CSV_HEADER);
        for (line, m) in lines[1..].iter().zip(Method::ALL) {
            assert_eq!(*line, analytic_flops(m, FlopsParams::default()).csv_row());
        }
        let doubled = flops_csv(FlopsParams::default(), true);
        assert!(doubled.lines().nth(3).unwrap().ends_with(&(2 * analytic_flops(Method::Npa, FlopsParams::default()).total()).to_string()));

        let unit = FlopsParams { s: 1, ..Default::default() };
        let text = flops_csv(unit, false);
        let tails: Vec<_> = text.lines().skip(1).map(|l| l.split_once(',').unwrap().1.to_string()).collect();
        assert!(tails.iter().all(|t| t == &tails[0]));
    }
}
