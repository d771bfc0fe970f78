use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative signal coefficients `ᾱ_t` for `t ∈ [0, T]`, with `ᾱ_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    t_max: usize,
    alphabar: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl NoiseSchedule {
    /// Linear-β schedule: `β_i` evenly spaced from `beta_start` to `beta_end`
    /// for `i = 1..=T`, `ᾱ_t = ∏_{i ≤ t} (1 − β_i)`.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::Config("timesteps must be positive".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "betas must satisfy 0 < {beta_start} <= {beta_end} < 1"
            )));
        }
        let mut alphabar = Vec::with_capacity(timesteps + 1);
        alphabar.push(1.0);
        let mut acc = 1.0;
        for i in 0..timesteps {
            let frac = if timesteps == 1 {
                0.0
            } else {
                i as f64 / (timesteps - 1) as f64
            };
            let beta = beta_start + (beta_end - beta_start) * frac;
            acc *= 1.0 - beta;
            alphabar.push(acc);
        }
        Ok(NoiseSchedule {
            t_max: timesteps,
            alphabar,
        })
    }

    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self> {
        Self::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn alphabar(&self, t: usize) -> Result<f64> {
        self.alphabar
            .get(t)
            .copied()
            .ok_or_else(|| Error::param(format!("timestep {t} outside [0, {}]", self.t_max)))
    }

    pub fn alphabars(&self) -> &[f64] {
        &self.alphabar
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::from_config(&ScheduleConfig::default()).expect("default schedule is valid")
    }
}

/// `steps + 1` evenly spaced integer timesteps from `start` down to 0.
pub fn timestep_ladder(start: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > start {
        return Err(Error::param(format!(
            "need 1 <= steps <= start timestep, got {steps} steps from {start}"
        )));
    }
    Ok((0..=steps).map(|i| start * (steps - i) / steps).collect())
}
