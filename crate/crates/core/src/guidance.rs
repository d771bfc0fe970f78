//! Latent frequency mixing, structure guidance and the two upsampling paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Resample, SpatialTensor};

/// Exact-inverse stand-in for a VAE: space-to-depth by `factor`, then a
/// seeded orthogonal channel mix.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyCodec<T> {
    factor: usize,
    pixel_channels: usize,
    /// Row-major `d × d` orthogonal matrix, `d = pixel_channels · factor²`.
    mix: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub factor: usize,
    pub pixel_channels: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            factor: 2,
            pixel_channels: 3,
            seed: 7,
        }
    }
}

impl<T: Scalar> ToyCodec<T> {
    pub fn new(factor: usize, pixel_channels: usize, seed: u64) -> Result<Self> {
        if factor == 0 || pixel_channels == 0 {
            return Err(Error::Config("codec factor and pixel channels must be positive".into()));
        }
        let d = pixel_channels * factor * factor;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
        while rows.len() < d {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            // two Gram–Schmidt passes keep the basis orthogonal to rounding
            for _ in 0..2 {
                for u in &rows {
                    let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (x, &y) in v.iter_mut().zip(u) {
                        *x -= dot * y;
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                rows.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        Ok(ToyCodec {
            factor,
            pixel_channels,
            mix: rows.into_iter().flatten().map(T::of).collect(),
        })
    }

    pub fn from_config(cfg: &CodecConfig) -> Result<Self> {
        Self::new(cfg.factor, cfg.pixel_channels, cfg.seed)
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn pixel_channels(&self) -> usize {
        self.pixel_channels
    }

    pub fn latent_channels(&self) -> usize {
        self.pixel_channels * self.factor * self.factor
    }

    /// `(H·f, W·f, c)` pixels to `(H, W, c·f²)` latents.
    pub fn encode(&self, pixels: &SpatialTensor<T>) -> Result<SpatialTensor<T>> {
        let (ph, pw, c) = pixels.shape();
        let f = self.factor;
        if c != self.pixel_channels || ph % f != 0 || pw % f != 0 {
            return Err(Error::shape(format!(
                "codec expects {}-channel pixels with extents divisible by {f}, got {:?}",
                self.pixel_channels,
                pixels.shape()
            )));
        }
        let d = self.latent_channels();
        let mut out = SpatialTensor::zeros(ph / f, pw / f, d);
        let mut packed = vec![T::zero(); d];
        for r in 0..ph / f {
            for col in 0..pw / f {
                for dy in 0..f {
                    for dx in 0..f {
                        let src = pixels.token(r * f + dy, col * f + dx);
                        packed[(dy * f + dx) * c..(dy * f + dx + 1) * c].copy_from_slice(src);
                    }
                }
                let dst = out.token_mut(r, col);
                for (i, y) in dst.iter_mut().enumerate() {
                    *y = self.mix[i * d..(i + 1) * d]
                        .iter()
                        .zip(&packed)
                        .fold(T::zero(), |acc, (&m, &x)| acc + m * x);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`ToyCodec::encode`].
    pub fn decode(&self, latent: &SpatialTensor<T>) -> Result<SpatialTensor<T>> {
        let (h, w, d) = latent.shape();
        if d != self.latent_channels() {
            return Err(Error::shape(format!(
                "codec expects {} latent channels, got {d}",
                self.latent_channels()
            )));
        }
        let (f, c) = (self.factor, self.pixel_channels);
        let mut out = SpatialTensor::zeros(h * f, w * f, c);
        let mut packed = vec![T::zero(); d];
        for r in 0..h {
            for col in 0..w {
                let y = latent.token(r, col);
                for (j, p) in packed.iter_mut().enumerate() {
                    *p = (0..d).fold(T::zero(), |acc, i| acc + self.mix[i * d + j] * y[i]);
                }
                for dy in 0..f {
                    for dx in 0..f {
                        out.token_mut(r * f + dy, col * f + dx)
                            .copy_from_slice(&packed[(dy * f + dx) * c..(dy * f + dx + 1) * c]);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Guidance strength as a function of the timestep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSchedule {
    /// `γ_t = 1 − ᾱ_t`.
    OneMinusAlphabar,
    /// `γ_t = t / T`.
    NormalizedT,
    /// The same strength at every step.
    Constant(f64),
}

impl GammaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GammaSchedule::Constant(g) if !(0.0..=1.0).contains(&g) => {
                Err(Error::Config(format!("constant gamma {g} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

pub fn gamma_at(t: usize, schedule: GammaSchedule, ns: &NoiseSchedule) -> Result<f64> {
    let ab = ns.alphabar(t)?;
    Ok(match schedule {
        GammaSchedule::OneMinusAlphabar => 1.0 - ab,
        GammaSchedule::NormalizedT => t as f64 / ns.t_max() as f64,
        GammaSchedule::Constant(g) => g,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceConfig {
    pub freq_ratio: usize,
    pub gamma_schedule: GammaSchedule,
    /// Guidance applies at timesteps `t >= min_t`.
    pub min_t: usize,
}

impl GuidanceConfig {
    pub fn new(freq_ratio: usize, gamma_schedule: GammaSchedule) -> Self {
        GuidanceConfig {
            freq_ratio,
            gamma_schedule,
            min_t: 0,
        }
    }
}

/// Bilinear upsampling by `s` directly in latent space.
pub fn upsample_latent<T: Scalar>(z: &SpatialTensor<T>, s: usize) -> Result<SpatialTensor<T>> {
    if s == 0 {
        return Err(Error::param("scale factor must be positive"));
    }
    if s == 1 {
        return Ok(z.clone());
    }
    z.resample(z.height() * s, z.width() * s, Resample::Bilinear)
}

/// Decode, upsample the pixels bilinearly by `s`, encode again.
pub fn upsample_rgb_roundtrip<T: Scalar>(
    z: &SpatialTensor<T>,
    s: usize,
    codec: &ToyCodec<T>,
) -> Result<SpatialTensor<T>> {
    if s == 0 {
        return Err(Error::param("scale factor must be positive"));
    }
    let pixels = codec.decode(z)?;
    let up = if s == 1 {
        pixels
    } else {
        pixels.resample(pixels.height() * s, pixels.width() * s, Resample::Bilinear)?
    };
    codec.encode(&up)
}

/// `high(z_ru) + low(z_lu)`.
pub fn latent_frequency_mixing<T: Scalar>(
    z_ru: &SpatialTensor<T>,
    z_lu: &SpatialTensor<T>,
    freq_ratio: usize,
) -> Result<SpatialTensor<T>> {
    if !z_ru.same_shape(z_lu) {
        return Err(Error::shape(format!(
            "frequency mixing of {:?} and {:?}",
            z_ru.shape(),
            z_lu.shape()
        )));
    }
    let (_, high) = z_ru.freq_split(freq_ratio)?;
    high.add(&z_lu.low_pass(freq_ratio)?)
}

/// `high(z0) + (1 − γ)·low(z0) + γ·low(z_ref)`.
pub fn structure_guidance<T: Scalar>(
    z0: &SpatialTensor<T>,
    z_ref: &SpatialTensor<T>,
    gamma: f64,
    freq_ratio: usize,
) -> Result<SpatialTensor<T>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::param(format!("guidance strength {gamma} outside [0, 1]")));
    }
    if !z0.same_shape(z_ref) {
        return Err(Error::shape(format!(
            "guidance of {:?} toward {:?}",
            z0.shape(),
            z_ref.shape()
        )));
    }
    let (low, high) = z0.freq_split(freq_ratio)?;
    let ref_low = z_ref.low_pass(freq_ratio)?;
    let g = T::of(gamma);
    high.add(&low.lincomb(T::one() - g, &ref_low, g)?)
}
