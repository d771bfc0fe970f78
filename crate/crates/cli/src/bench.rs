//! Wall-clock scaling sweep of one denoiser forward per mode and scale.

use std::io::Write;
use std::time::Instant;

use anyhow::{bail, Result};
use hires_core::diffusion::{
    DenoiserConfig, MultiDiffusion, NoisePredictor, NoiseSchedule, SelfAttention, ToyDenoiser,
};
use hires_core::flops::Method;
use hires_core::tensor::SpatialTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

pub const CSV_HEADER: &str = "mode,s,tokens,median_s,min_s,max_s";

/// Sweep definition. Defaults keep a base-mode forward at `s = 8` (65536
/// tokens, hidden width 64) under a minute on one core.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchSpec {
    pub native: usize,
    pub hidden: usize,
    pub heads: usize,
    pub depth: usize,
    pub latent_channels: usize,
    pub scales: Vec<usize>,
    pub repeats: usize,
    pub modes: Vec<Method>,
    pub timestep: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            native: 32,
            hidden: 64,
            heads: 1,
            depth: 1,
            latent_channels: 12,
            scales: vec![1, 2, 4, 8],
            repeats: 3,
            modes: Method::ALL.to_vec(),
            timestep: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub mode: Method,
    pub s: usize,
    pub tokens: usize,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// Standard deviation of the repeats divided by their median.
    pub spread: f64,
}

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6}",
            self.mode, self.s, self.tokens, self.median_s, self.min_s, self.max_s
        )
    }

    pub fn is_noisy(&self) -> bool {
        self.spread > 0.5
    }
}

fn summarize(mode: Method, s: usize, tokens: usize, mut times: Vec<f64>) -> BenchRow {
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    let mean = times.iter().sum::<f64>() / n as f64;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n as f64;
    BenchRow {
        mode,
        s,
        tokens,
        median_s: median,
        min_s: times[0],
        max_s: times[n - 1],
        spread: if median > 0.0 { var.sqrt() / median } else { 0.0 },
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 3 {
            bail!("repeats must be at least 3, got {}", self.repeats);
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            bail!("scales must be a non-empty list of positive integers");
        }
        if self.native < 2 || self.native % 2 != 0 {
            bail!("native extent must be even, got {}", self.native);
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ToyDenoiser<f64>> {
        let cfg = DenoiserConfig {
            hidden: self.hidden,
            heads: self.heads,
            depth: self.depth,
            seed: self.seed,
            ..Default::default()
        };
        Ok(ToyDenoiser::new(
            &cfg,
            self.latent_channels,
            self.native,
            self.native,
            NoiseSchedule::default(),
        )?)
    }

    /// Times one forward for `mode` at scale `s`, `repeats` times.
    pub fn measure(&self, model: &ToyDenoiser<f64>, mode: Method, s: usize) -> Result<BenchRow> {
        let extent = self.native * s;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ s as u64);
        let z = SpatialTensor::from_fn(extent, extent, self.latent_channels, |_, _, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let npa = model.with_attention(SelfAttention::Patch { shift_seed: None });
        let md = MultiDiffusion {
            inner: model,
            native_h: self.native,
            native_w: self.native,
            stride_h: self.native / 2,
            stride_w: self.native / 2,
        };
        let predictor: &dyn NoisePredictor<f64> = match mode {
            Method::Base => model,
            Method::Npa => &npa,
            Method::MultiDiffusion => &md,
        };
        let mut times = Vec::with_capacity(self.repeats);
        for _ in 0..self.repeats {
            let start = Instant::now();
            let out = predictor.predict_noise(&z, self.timestep)?;
            times.push(start.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
        Ok(summarize(mode, s, extent * extent, times))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    /// Set when the sweep stopped at a row whose repeats were too spread out.
    pub noisy: Option<BenchRow>,
}

/// Runs the sweep, streaming CSV rows to `out` as they complete. With
/// `stop_on_noise`, the sweep ends after the first noisy row.
pub fn run_bench(spec: &BenchSpec, out: &mut dyn Write, stop_on_noise: bool) -> Result<BenchOutcome> {
    spec.validate()?;
    let model = spec.model()?;
    let warm = BenchSpec { repeats: 1, ..spec.clone() };
    for &mode in &spec.modes {
        warm.measure(&model, mode, 1)?;
    }
    writeln!(out, "{CSV_HEADER}")?;
    let mut rows = Vec::new();
    for &mode in &spec.modes {
        for &s in &spec.scales {
            let row = spec.measure(&model, mode, s)?;
            writeln!(out, "{}", row.csv_row())?;
            out.flush()?;
            rows.push(row.clone());
            if stop_on_noise && row.is_noisy() {
                return Ok(BenchOutcome { rows, noisy: Some(row) });
            }
        }
    }
    Ok(BenchOutcome { rows, noisy: None })
}

/// Least-squares slope of `ln(median_s)` against `ln(s)` for one mode.
pub fn loglog_slope(rows: &[BenchRow], mode: Method, scales: &[usize]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mode == mode && scales.contains(&r.s) && r.median_s > 0.0)
        .map(|r| ((r.s as f64).ln(), r.median_s.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let r = summarize(Method::Npa, 2, 16, vec![3.0, 1.0, 2.0]);
        assert_eq!((r.median_s, r.min_s, r.max_s), (2.0, 1.0, 3.0));
        assert!((r.spread - (2.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
        assert!(!r.is_noisy());
        assert!(summarize(Method::Npa, 2, 16, vec![1.0, 1.0, 9.0]).is_noisy());
        assert_eq!(r.csv_row(), "npa,2,16,2.000000,1.000000,3.000000");
    }

    #[test]
    fn slope_of_exact_power_law() {
        let rows: Vec<BenchRow> = [2usize, 4, 8]
            .iter()
            .map(|&s| summarize(Method::Base, s, 0, vec![(s as f64).powi(4) * 1e-3; 3]))
            .collect();
        let slope = loglog_slope(&rows, Method::Base, &[2, 4, 8]).unwrap();
        assert!((slope - 4.0).abs() < 1e-12);
        assert!(loglog_slope(&rows, Method::Npa, &[2, 4, 8]).is_none());
    }

    #[test]
    fn tiny_sweep_writes_csv() {
        let spec = BenchSpec {
            native: 4,
            hidden: 8,
            scales: vec![1, 2],
            ..Default::default()
        };
        let mut buf = Vec::new();
        let rows = run_bench(&spec, &mut buf, false).unwrap().rows;
        assert_eq!(rows.len(), 6);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().count(), 7);
        assert!(BenchSpec { repeats: 2, ..spec }.validate().is_err());
    }
}
