use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::{DenoiserConfig, MultiDiffusion, NoisePredictor, SelfAttention, ToyDenoiser};
use super::schedule::{timestep_ladder, NoiseSchedule, ScheduleConfig};
use super::step::{denoise_loop, forward_diffuse, Guidance, StepOutput};
use crate::attention::sliding_windows;
use crate::error::{Error, Result};
use crate::flops::Method;
use crate::guidance::{
    latent_frequency_mixing, upsample_latent, upsample_rgb_roundtrip, CodecConfig, GammaSchedule, GuidanceConfig,
    ToyCodec,
};
use crate::scalar::Scalar;
use crate::tensor::SpatialTensor;

fn yes() -> bool {
    true
}

/// Everything needed to reproduce a multi-stage run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub native_h: usize,
    pub native_w: usize,
    /// Scale factor of each stage relative to the previous one; the first is 1.
    pub stages: Vec<usize>,
    /// Timestep at which upscaling stages re-enter diffusion.
    pub tau: usize,
    pub steps: usize,
    pub attention_mode: Method,
    pub gamma_schedule: GammaSchedule,
    pub freq_ratio: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub lfm_enabled: bool,
    #[serde(default = "yes")]
    pub sg_enabled: bool,
    #[serde(default)]
    pub shift_enabled: bool,
    /// MultiDiffusion strides; half the native extent when absent.
    #[serde(default)]
    pub md_stride: Option<[usize; 2]>,
    #[serde(default)]
    pub model: DenoiserConfig,
    #[serde(default)]
    pub codec: CodecConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

impl PipelineConfig {
    pub fn md_strides(&self) -> (usize, usize) {
        match self.md_stride {
            Some([sh, sw]) => (sh, sw),
            None => (self.native_h / 2, self.native_w / 2),
        }
    }

    /// Latent extent after each stage.
    pub fn stage_extents(&self) -> Vec<(usize, usize)> {
        let mut s = 1;
        self.stages
            .iter()
            .map(|&k| {
                s *= k;
                (self.native_h * s, self.native_w * s)
            })
            .collect()
    }

    /// Checks every constraint, naming the offending key in the error.
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("native_h", self.native_h), ("native_w", self.native_w)] {
            if v < 2 || v % 2 != 0 {
                return Err(config_err(key, format!("must be an even number >= 2, got {v}")));
            }
        }
        if self.stages.is_empty() {
            return Err(config_err("stages", "must list at least one stage"));
        }
        if self.stages[0] != 1 {
            return Err(config_err("stages", "the first stage generates at native scale and must be 1"));
        }
        if self.stages.iter().any(|&s| s == 0) {
            return Err(config_err("stages", "scale factors must be positive"));
        }
        let t_max = self.schedule.timesteps;
        NoiseSchedule::from_config(&self.schedule).map_err(|e| config_err("schedule", e))?;
        if self.tau == 0 || self.tau > t_max {
            return Err(config_err("tau", format!("must lie in [1, {t_max}], got {}", self.tau)));
        }
        if self.steps == 0 || self.steps > self.tau {
            return Err(config_err(
                "steps",
                format!("must lie in [1, tau = {}], got {}", self.tau, self.steps),
            ));
        }
        self.gamma_schedule
            .validate()
            .map_err(|e| config_err("gamma_schedule", e))?;
        if self.freq_ratio == 0 {
            return Err(config_err("freq_ratio", "must be positive"));
        }
        let extents = self.stage_extents();
        for &(h, w) in &extents[1..] {
            if h % self.freq_ratio != 0 || w % self.freq_ratio != 0 {
                return Err(config_err(
                    "freq_ratio",
                    format!("{} does not divide latent extent {h}x{w}", self.freq_ratio),
                ));
            }
        }
        let (sh, sw) = self.md_strides();
        for &(h, w) in &extents {
            sliding_windows(h, w, self.native_h, self.native_w, sh, sw).map_err(|e| config_err("md_stride", e))?;
        }
        if self.codec.factor == 0 || self.codec.pixel_channels == 0 {
            return Err(config_err("codec", "factor and pixel_channels must be positive"));
        }
        let m = &self.model;
        if m.hidden < 2 || m.hidden % 2 != 0 {
            return Err(config_err("model.hidden", format!("must be even and >= 2, got {}", m.hidden)));
        }
        if m.depth == 0 {
            return Err(config_err("model.depth", "must be positive"));
        }
        if m.heads == 0 || m.hidden % m.heads != 0 {
            return Err(config_err("model.heads", format!("must divide model.hidden = {}", m.hidden)));
        }
        if m.use_rope && (m.hidden / m.heads) % 4 != 0 {
            return Err(config_err("model.use_rope", "needs a head dimension divisible by 4"));
        }
        if m.conv_kernel % 2 == 0 && m.conv_kernel != 0 {
            return Err(config_err("model.conv_kernel", "must be 0 or odd"));
        }
        Ok(())
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig::new(self.freq_ratio, self.gamma_schedule)
    }
}

/// Shared model, codec and schedule built from a config.
#[derive(Clone, Debug)]
pub struct PipelineParts<T> {
    pub schedule: NoiseSchedule,
    pub codec: ToyCodec<T>,
    pub model: ToyDenoiser<T>,
}

impl<T: Scalar> PipelineParts<T> {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = NoiseSchedule::from_config(&cfg.schedule)?;
        let codec = ToyCodec::from_config(&cfg.codec)?;
        let model = ToyDenoiser::new(
            &cfg.model,
            codec.latent_channels(),
            cfg.native_h,
            cfg.native_w,
            schedule.clone(),
        )?;
        Ok(PipelineParts { schedule, codec, model })
    }

    /// The noise predictor for `mode`, seeded per stage when shifting is on.
    pub fn predictor(&self, cfg: &PipelineConfig, mode: Method, stage: usize) -> Box<dyn NoisePredictor<T> + '_> {
        match mode {
            Method::Base => Box::new(&self.model),
            Method::Npa => {
                let shift_seed = cfg
                    .shift_enabled
                    .then(|| cfg.seed ^ 0xA076_1D64_78BD_642F_u64.wrapping_mul(stage as u64 + 1));
                Box::new(self.model.with_attention(SelfAttention::Patch { shift_seed }))
            }
            Method::MultiDiffusion => {
                let (stride_h, stride_w) = cfg.md_strides();
                Box::new(MultiDiffusion {
                    inner: &self.model,
                    native_h: cfg.native_h,
                    native_w: cfg.native_w,
                    stride_h,
                    stride_w,
                })
            }
        }
    }
}

/// Generator for the noise injected by stage `stage`.
pub fn stage_rng(seed: u64, stage: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng
}

/// Native-resolution latent from pure noise, denoised from `T` to 0 without guidance.
pub fn generate_native<T: Scalar, P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    cfg: &PipelineConfig,
    latent_channels: usize,
    model: &P,
    ns: &NoiseSchedule,
    rng: &mut R,
) -> Result<SpatialTensor<T>> {
    let z = SpatialTensor::from_fn(cfg.native_h, cfg.native_w, latent_channels, |_, _, _| {
        T::of(rng.sample::<f64, _>(StandardNormal))
    });
    let ladder = timestep_ladder(ns.t_max(), cfg.steps)?;
    denoise_loop(z, &ladder, model, ns, None, &mut |_| {})
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdeditOutput<T> {
    pub z_ru: SpatialTensor<T>,
    pub z_lu: SpatialTensor<T>,
    /// Starting point of the stage and target of structure guidance.
    pub reference: SpatialTensor<T>,
    pub latent: SpatialTensor<T>,
}

/// Upsample by `s`, diffuse the reference to `τ`, and denoise back to 0.
#[allow(clippy::too_many_arguments)]
pub fn sdedit_stage<T: Scalar, P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    z_low: &SpatialTensor<T>,
    s: usize,
    cfg: &PipelineConfig,
    model: &P,
    codec: &ToyCodec<T>,
    ns: &NoiseSchedule,
    rng: &mut R,
    observer: &mut dyn FnMut(&StepOutput<T>),
) -> Result<SdeditOutput<T>> {
    let z_ru = upsample_rgb_roundtrip(z_low, s, codec)?;
    let z_lu = upsample_latent(z_low, s)?;
    let reference = if cfg.lfm_enabled {
        latent_frequency_mixing(&z_ru, &z_lu, cfg.freq_ratio)?
    } else {
        z_ru.clone()
    };
    let z_tau = forward_diffuse(&reference, cfg.tau, ns, rng)?;
    let ladder = timestep_ladder(cfg.tau, cfg.steps)?;
    let guidance = Guidance {
        reference: &reference,
        config: cfg.guidance(),
    };
    let latent = denoise_loop(
        z_tau,
        &ladder,
        model,
        ns,
        cfg.sg_enabled.then_some(&guidance),
        observer,
    )?;
    Ok(SdeditOutput {
        z_ru,
        z_lu,
        reference,
        latent,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageResult<T> {
    pub index: usize,
    pub scale: usize,
    pub latent: SpatialTensor<T>,
    /// Decoded pixels.
    pub image: SpatialTensor<T>,
    /// Wall time of the stage's denoising work.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun<T> {
    pub stages: Vec<StageResult<T>>,
}

impl<T> PipelineRun<T> {
    pub fn final_latent(&self) -> &SpatialTensor<T> {
        &self.stages.last().expect("at least one stage").latent
    }
}

/// Stage 0 generates at native scale; each later stage upscales the previous
/// latent with [`sdedit_stage`].
pub fn run_pipeline<T: Scalar>(cfg: &PipelineConfig) -> Result<PipelineRun<T>> {
    let parts = PipelineParts::<T>::new(cfg)?;
    run_pipeline_with(cfg, &parts)
}

pub fn run_pipeline_with<T: Scalar>(cfg: &PipelineConfig, parts: &PipelineParts<T>) -> Result<PipelineRun<T>> {
    cfg.validate()?;
    let mut stages = Vec::with_capacity(cfg.stages.len());
    for (index, &scale) in cfg.stages.iter().enumerate() {
        let start = Instant::now();
        let mut rng = stage_rng(cfg.seed, index);
        let latent = if index == 0 {
            generate_native(
                cfg,
                parts.codec.latent_channels(),
                &parts.model,
                &parts.schedule,
                &mut rng,
            )?
        } else {
            let prev: &StageResult<T> = stages.last().expect("stage 0 ran");
            let model = parts.predictor(cfg, cfg.attention_mode, index);
            sdedit_stage(
                &prev.latent,
                scale,
                cfg,
                &*model,
                &parts.codec,
                &parts.schedule,
                &mut rng,
                &mut |_| {},
            )?
            .latent
        };
        let seconds = start.elapsed().as_secs_f64();
        let image = parts.codec.decode(&latent)?;
        stages.push(StageResult {
            index,
            scale,
            latent,
            image,
            seconds,
        });
    }
    Ok(PipelineRun { stages })
}
