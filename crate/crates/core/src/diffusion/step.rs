use rand::Rng;
use rand_distr::StandardNormal;

use super::denoiser::NoisePredictor;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::guidance::{gamma_at, structure_guidance, GuidanceConfig};
use crate::scalar::Scalar;
use crate::tensor::SpatialTensor;

/// `√ᾱ_t·z0 + √(1−ᾱ_t)·ε` with `ε` drawn from `rng`.
pub fn forward_diffuse<T: Scalar, R: Rng + ?Sized>(
    z0: &SpatialTensor<T>,
    t: usize,
    ns: &NoiseSchedule,
    rng: &mut R,
) -> Result<SpatialTensor<T>> {
    let ab = ns.alphabar(t)?;
    let noise = SpatialTensor::from_fn(z0.height(), z0.width(), z0.channels(), |_, _, _| {
        T::of(rng.sample::<f64, _>(StandardNormal))
    });
    z0.lincomb(T::of(ab.sqrt()), &noise, T::of((1.0 - ab).sqrt()))
}

/// Structure guidance toward a fixed reference latent.
#[derive(Clone, Copy, Debug)]
pub struct Guidance<'a, T> {
    pub reference: &'a SpatialTensor<T>,
    pub config: GuidanceConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput<T> {
    pub t: usize,
    pub t_prev: usize,
    /// Clean estimate implied by the model's noise prediction.
    pub z0: SpatialTensor<T>,
    /// Clean estimate after guidance (equal to `z0` without guidance).
    pub z0_guided: SpatialTensor<T>,
    pub gamma: Option<f64>,
    pub latent: SpatialTensor<T>,
}

/// Deterministic update from `Z_t` to `Z_{t_prev}` given a clean estimate.
///
/// The noise estimate is recomputed from `z0_hat`, so the update is
/// consistent with the (possibly guided) clean estimate.
pub fn step_from_clean<T: Scalar>(
    z_t: &SpatialTensor<T>,
    z0_hat: &SpatialTensor<T>,
    t: usize,
    t_prev: usize,
    ns: &NoiseSchedule,
) -> Result<SpatialTensor<T>> {
    if t <= t_prev {
        return Err(Error::param(format!("step must go down in time, got {t} -> {t_prev}")));
    }
    let ab = ns.alphabar(t)?;
    let ab_prev = ns.alphabar(t_prev)?;
    let eps = z_t.lincomb(
        T::one() / T::of((1.0 - ab).sqrt()),
        z0_hat,
        -T::of(ab.sqrt() / (1.0 - ab).sqrt()),
    )?;
    if t_prev == 0 && ab_prev == 1.0 {
        return Ok(z0_hat.clone());
    }
    z0_hat.lincomb(T::of(ab_prev.sqrt()), &eps, T::of((1.0 - ab_prev).sqrt()))
}

pub fn denoise_step<T: Scalar, P: NoisePredictor<T> + ?Sized>(
    z_t: &SpatialTensor<T>,
    t: usize,
    t_prev: usize,
    model: &P,
    ns: &NoiseSchedule,
    guidance: Option<&Guidance<'_, T>>,
) -> Result<StepOutput<T>> {
    if t <= t_prev {
        return Err(Error::param(format!("step must go down in time, got {t} -> {t_prev}")));
    }
    let ab = ns.alphabar(t)?;
    let eps = model.predict_noise(z_t, t)?;
    let z0 = z_t.lincomb(
        T::one() / T::of(ab.sqrt()),
        &eps,
        -T::of((1.0 - ab).sqrt() / ab.sqrt()),
    )?;
    let (z0_guided, gamma) = match guidance {
        Some(g) if t >= g.config.min_t => {
            let gamma = gamma_at(t, g.config.gamma_schedule, ns)?;
            (
                structure_guidance(&z0, g.reference, gamma, g.config.freq_ratio)?,
                Some(gamma),
            )
        }
        _ => (z0.clone(), None),
    };
    let latent = step_from_clean(z_t, &z0_guided, t, t_prev, ns)?;
    Ok(StepOutput {
        t,
        t_prev,
        z0,
        z0_guided,
        gamma,
        latent,
    })
}

/// Runs `denoise_step` down a timestep ladder, reporting every step.
pub fn denoise_loop<T: Scalar, P: NoisePredictor<T> + ?Sized>(
    z: SpatialTensor<T>,
    ladder: &[usize],
    model: &P,
    ns: &NoiseSchedule,
    guidance: Option<&Guidance<'_, T>>,
    observer: &mut dyn FnMut(&StepOutput<T>),
) -> Result<SpatialTensor<T>> {
    let mut z = z;
    for pair in ladder.windows(2) {
        let out = denoise_step(&z, pair[0], pair[1], model, ns, guidance)?;
        observer(&out);
        if !out.latent.all_finite() {
            return Err(Error::param(format!("non-finite latent at t = {}", pair[1])));
        }
        z = out.latent;
    }
    Ok(z)
}
