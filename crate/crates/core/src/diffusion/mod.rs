//! Noise schedule, sampling steps, the toy denoiser and the multi-stage upscaler.

mod denoiser;
mod pipeline;
mod schedule;
mod step;

pub use crate::flops::Method as AttentionMode;
pub use denoiser::{
    coverage_counts, time_embedding, DenoiserConfig, MultiDiffusion, NoisePredictor, SelfAttention, ToyDenoiser,
};
pub use pipeline::{
    generate_native, run_pipeline, run_pipeline_with, sdedit_stage, stage_rng, PipelineConfig, PipelineParts,
    PipelineRun, SdeditOutput, StageResult,
};
pub use schedule::{timestep_ladder, NoiseSchedule, ScheduleConfig};
pub use step::{denoise_loop, denoise_step, forward_diffuse, step_from_clean, Guidance, StepOutput};
