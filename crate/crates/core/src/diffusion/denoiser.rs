use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::attention::{
    attend, build_patch_set, full_attention, npa_attention, sliding_windows, AttentionConfig, QueryShift,
    Tokens,
};
use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::linalg::{affine, gemm_acc};
use crate::scalar::Scalar;
use crate::tensor::{Rect, SpatialTensor};

/// Anything that predicts the noise in `z` at timestep `t`.
pub trait NoisePredictor<T: Scalar>: Sync {
    fn predict_noise(&self, z: &SpatialTensor<T>, t: usize) -> Result<SpatialTensor<T>>;
}

impl<T: Scalar, P: NoisePredictor<T> + ?Sized> NoisePredictor<T> for &P {
    fn predict_noise(&self, z: &SpatialTensor<T>, t: usize) -> Result<SpatialTensor<T>> {
        (**self).predict_noise(z, t)
    }
}

impl<T: Scalar, P: NoisePredictor<T> + ?Sized> NoisePredictor<T> for Box<P> {
    fn predict_noise(&self, z: &SpatialTensor<T>, t: usize) -> Result<SpatialTensor<T>> {
        (**self).predict_noise(z, t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub hidden: usize,
    pub heads: usize,
    pub depth: usize,
    /// Side of an optional same-padding convolution after the input projection; 0 disables it.
    pub conv_kernel: usize,
    /// Number of fixed context tokens reached through cross-attention.
    pub context_len: usize,
    pub use_rope: bool,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            hidden: 32,
            heads: 2,
            depth: 2,
            conv_kernel: 0,
            context_len: 0,
            use_rope: false,
            seed: 1234,
        }
    }
}

/// Self-attention layout used inside one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelfAttention {
    /// Every token attends to every token.
    Full,
    /// Neighborhood patch attention with the model's native extent; with
    /// `shift_seed`, each layer shifts its query grid by a seeded offset.
    Patch { shift_seed: Option<u64> },
}

#[derive(Clone, Debug)]
struct Linear<T> {
    w: Vec<T>,
    b: Vec<T>,
    fan_in: usize,
    fan_out: usize,
}

impl<T: Scalar> Linear<T> {
    fn new(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, gain: f64) -> Self {
        let std = gain / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let b = (0..fan_out).map(|_| T::of(0.1 * rng.gen_range(-1.0..1.0))).collect();
        Linear { w, b, fan_in, fan_out }
    }

    fn apply(&self, x: &[T], counter: &FlopCounter) -> Vec<T> {
        let rows = x.len() / self.fan_in;
        counter.add_linear((rows * self.fan_in * self.fan_out) as u64);
        affine(x, rows, self.fan_in, &self.w, &self.b, self.fan_out)
    }
}

#[derive(Clone, Debug)]
struct Block<T> {
    q: Linear<T>,
    k: Linear<T>,
    v: Linear<T>,
    o: Linear<T>,
    up: Linear<T>,
    down: Linear<T>,
}

/// Deterministic, randomly initialized transformer-style noise predictor.
///
/// `g` maps `z_t` and `t` through an input projection, an optional
/// convolution, a sinusoidal time embedding, `depth` pre-norm blocks of
/// attention and MLP, and an output projection. The returned noise is
/// `√(1−ᾱ_t)·z_t + √ᾱ_t·g`, whose implied clean estimate
/// `√ᾱ_t·z_t − √(1−ᾱ_t)·g` stays bounded at every timestep.
#[derive(Clone, Debug)]
pub struct ToyDenoiser<T> {
    cfg: DenoiserConfig,
    latent_channels: usize,
    native_h: usize,
    native_w: usize,
    attention: SelfAttention,
    attn_cfg: AttentionConfig,
    schedule: NoiseSchedule,
    input: Linear<T>,
    conv: Option<Vec<T>>,
    blocks: Vec<Block<T>>,
    output: Linear<T>,
    context: Option<(Vec<T>, Vec<T>)>,
    counter: std::sync::Arc<FlopCounter>,
}

impl<T: Scalar> ToyDenoiser<T> {
    pub fn new(
        cfg: &DenoiserConfig,
        latent_channels: usize,
        native_h: usize,
        native_w: usize,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        if cfg.hidden == 0 || cfg.depth == 0 || latent_channels == 0 {
            return Err(Error::Config("model.hidden, model.depth and latent channels must be positive".into()));
        }
        if cfg.hidden % 2 != 0 {
            return Err(Error::Config(format!("model.hidden must be even, got {}", cfg.hidden)));
        }
        if cfg.conv_kernel % 2 == 0 && cfg.conv_kernel != 0 {
            return Err(Error::Config(format!("model.conv_kernel must be odd, got {}", cfg.conv_kernel)));
        }
        let attn_cfg = AttentionConfig::new(cfg.heads).with_rope(cfg.use_rope);
        attn_cfg
            .head_dim(cfg.hidden)
            .map_err(|e| Error::Config(format!("model.heads: {e}")))?;
        let d = cfg.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let input = Linear::new(&mut rng, latent_channels, d, 1.0);
        let conv = (cfg.conv_kernel > 0).then(|| {
            let taps = cfg.conv_kernel * cfg.conv_kernel;
            let std = 0.5 / ((taps * d) as f64).sqrt();
            (0..taps * d * d)
                .map(|_| T::of(std * rng.sample::<f64, _>(StandardNormal)))
                .collect()
        });
        let blocks = (0..cfg.depth)
            .map(|_| Block {
                q: Linear::new(&mut rng, d, d, 1.0),
                k: Linear::new(&mut rng, d, d, 1.0),
                v: Linear::new(&mut rng, d, d, 1.0),
                o: Linear::new(&mut rng, d, d, 0.5),
                up: Linear::new(&mut rng, d, 2 * d, 1.0),
                down: Linear::new(&mut rng, 2 * d, d, 0.5),
            })
            .collect();
        let output = Linear::new(&mut rng, d, latent_channels, 1.0);
        let context = (cfg.context_len > 0).then(|| {
            let n = cfg.context_len * d;
            let mut draw = || -> Vec<T> {
                (0..n)
                    .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
                    .collect()
            };
            let k = draw();
            let v = draw();
            (k, v)
        });
        Ok(ToyDenoiser {
            cfg: cfg.clone(),
            latent_channels,
            native_h,
            native_w,
            attention: SelfAttention::Full,
            attn_cfg,
            schedule,
            input,
            conv,
            blocks,
            output,
            context,
            counter: Default::default(),
        })
    }

    /// Same weights with a different self-attention layout.
    pub fn with_attention(&self, attention: SelfAttention) -> Self {
        ToyDenoiser {
            attention,
            ..self.clone()
        }
    }

    /// Same weights with a fresh, separate counter.
    pub fn with_counter(&self, counter: std::sync::Arc<FlopCounter>) -> Self {
        ToyDenoiser {
            counter,
            ..self.clone()
        }
    }

    pub fn counter(&self) -> &FlopCounter {
        &self.counter
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn native(&self) -> (usize, usize) {
        (self.native_h, self.native_w)
    }

    pub fn latent_channels(&self) -> usize {
        self.latent_channels
    }

    pub fn attention(&self) -> SelfAttention {
        self.attention
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// The network output `g(z, t)` before mixing with `z`.
    pub fn network(&self, z: &SpatialTensor<T>, t: usize) -> Result<SpatialTensor<T>> {
        let (h, w, c) = z.shape();
        if c != self.latent_channels {
            return Err(Error::shape(format!(
                "model expects {} latent channels, got {c}",
                self.latent_channels
            )));
        }
        let d = self.cfg.hidden;
        let mut x = self.input.apply(z.data(), &self.counter);
        if let Some(kernel) = &self.conv {
            let y = self.conv_same(&x, h, w, kernel);
            for (a, b) in x.iter_mut().zip(y) {
                *a += b;
            }
        }
        let emb = time_embedding::<T>(t, d);
        for row in x.chunks_exact_mut(d) {
            for (a, &e) in row.iter_mut().zip(&emb) {
                *a += e;
            }
        }

        let patches = match self.attention {
            SelfAttention::Full => None,
            SelfAttention::Patch { .. } => Some(build_patch_set(h, w, self.native_h, self.native_w)?),
        };

        for (bi, block) in self.blocks.iter().enumerate() {
            let n = rms_norm(&x, d);
            let q = block.q.apply(&n, &self.counter);
            let k = block.k.apply(&n, &self.counter);
            let v = block.v.apply(&n, &self.counter);
            let qt = SpatialTensor::new(h, w, d, q)?;
            let kt = SpatialTensor::new(h, w, d, k)?;
            let vt = SpatialTensor::new(h, w, d, v)?;

            let mut a = match (&patches, self.attention) {
                (Some(ps), SelfAttention::Patch { shift_seed }) => {
                    let shift = shift_seed.map(|seed| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                        rng.set_stream(bi as u64);
                        QueryShift::sample(self.native_h, self.native_w, &mut rng)
                    });
                    let windows = match shift {
                        Some(sh) => {
                            crate::attention::shifted_plan(h, w, self.native_h, self.native_w, sh)?.windows
                        }
                        None => ps.windows(),
                    };
                    let macs: usize = windows.iter().map(|win| win.q.area() * win.kv.area() * d).sum();
                    self.counter.add_self_attn(macs as u64);
                    npa_attention(&qt, &kt, &vt, ps, &self.attn_cfg, None, shift)?.latent
                }
                _ => {
                    self.counter.add_self_attn((h * w * h * w * d) as u64);
                    full_attention(&qt, &kt, &vt, &self.attn_cfg)?
                }
            }
            .into_data();

            if let Some((ck, cv)) = &self.context {
                let l = self.cfg.context_len;
                self.counter.add_cross_attn((h * w * l * d) as u64);
                let cross = attend(
                    Tokens { data: qt.data(), rows: h * w },
                    Tokens { data: ck, rows: l },
                    Tokens { data: cv, rows: l },
                    d,
                    self.cfg.heads,
                    self.attn_cfg.scale::<T>(d)?,
                );
                for (x, y) in a.iter_mut().zip(cross) {
                    *x += y;
                }
            }

            for (xi, yi) in x.iter_mut().zip(block.o.apply(&a, &self.counter)) {
                *xi += yi;
            }
            let n = rms_norm(&x, d);
            let mut hid = block.up.apply(&n, &self.counter);
            for u in &mut hid {
                *u = silu(*u);
            }
            for (xi, yi) in x.iter_mut().zip(block.down.apply(&hid, &self.counter)) {
                *xi += yi;
            }
        }

        let n = rms_norm(&x, d);
        SpatialTensor::new(h, w, self.latent_channels, self.output.apply(&n, &self.counter))
    }

    /// Zero-padded `k × k` convolution over the `h × w × d` token grid.
    fn conv_same(&self, x: &[T], h: usize, w: usize, kernel: &[T]) -> Vec<T> {
        let d = self.cfg.hidden;
        let k = self.cfg.conv_kernel;
        let half = k / 2;
        self.counter.add_conv((h * w * k * k * d * d) as u64);
        let (ph, pw) = (h + 2 * half, w + 2 * half);
        let mut padded = vec![T::zero(); ph * pw * d];
        for r in 0..h {
            let dst = ((r + half) * pw + half) * d;
            padded[dst..dst + w * d].copy_from_slice(&x[r * w * d..(r + 1) * w * d]);
        }
        let mut out = vec![T::zero(); h * w * d];
        out.par_chunks_mut(w * d).enumerate().for_each(|(r, orow)| {
            for dy in 0..k {
                for dx in 0..k {
                    let tap = &kernel[(dy * k + dx) * d * d..(dy * k + dx + 1) * d * d];
                    let src = &padded[((r + dy) * pw + dx) * d..((r + dy) * pw + dx + w) * d];
                    gemm_acc(w, d, d, src, d, tap, d, orow, d);
                }
            }
        });
        out
    }
}

impl<T: Scalar> NoisePredictor<T> for ToyDenoiser<T> {
    fn predict_noise(&self, z: &SpatialTensor<T>, t: usize) -> Result<SpatialTensor<T>> {
        let ab = self.schedule.alphabar(t)?;
        let g = self.network(z, t)?;
        z.lincomb(T::of((1.0 - ab).sqrt()), &g, T::of(ab.sqrt()))
    }
}

fn rms_norm<T: Scalar>(x: &[T], d: usize) -> Vec<T> {
    let eps = T::of(1e-6);
    let inv_d = T::one() / T::of_usize(d);
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(d) {
        let ms = row.iter().fold(T::zero(), |acc, &v| acc + v * v) * inv_d;
        let inv = T::one() / (ms + eps).sqrt();
        out.extend(row.iter().map(|&v| v * inv));
    }
    out
}

fn silu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

/// `[sin(t·ω_0), cos(t·ω_0), sin(t·ω_1), …]` with `ω_i = 10000^(−2i/d)`.
pub fn time_embedding<T: Scalar>(t: usize, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(d);
    for i in 0..d / 2 {
        let omega = 10_000f64.powf(-2.0 * i as f64 / d as f64);
        let phase = t as f64 * omega;
        out.push(T::of(phase.sin()));
        out.push(T::of(phase.cos()));
    }
    out.resize(d, T::zero());
    out
}

/// Averages an inner predictor over overlapping native-size crops.
///
/// Crops are predicted in parallel and summed into the output in ascending
/// crop order, then each token is divided by its cover count.
#[derive(Clone, Debug)]
pub struct MultiDiffusion<P> {
    pub inner: P,
    pub native_h: usize,
    pub native_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
}

impl<P> MultiDiffusion<P> {
    pub fn windows(&self, height: usize, width: usize) -> Result<Vec<Rect>> {
        sliding_windows(height, width, self.native_h, self.native_w, self.stride_h, self.stride_w)
    }
}

/// Number of crops covering each token, row-major.
pub fn coverage_counts(height: usize, width: usize, windows: &[Rect]) -> Vec<usize> {
    let mut counts = vec![0; height * width];
    for r in windows {
        for row in r.row_start..r.row_end {
            for col in r.col_start..r.col_end {
                counts[row * width + col] += 1;
            }
        }
    }
    counts
}

impl<T: Scalar, P: NoisePredictor<T>> NoisePredictor<T> for MultiDiffusion<P> {
    fn predict_noise(&self, z: &SpatialTensor<T>, t: usize) -> Result<SpatialTensor<T>> {
        let (h, w, c) = z.shape();
        let windows = self.windows(h, w)?;
        let preds: Vec<SpatialTensor<T>> = windows
            .par_iter()
            .map(|r| self.inner.predict_noise(&z.crop(r)?, t))
            .collect::<Result<_>>()?;
        let mut sum = SpatialTensor::zeros(h, w, c);
        for (r, p) in windows.iter().zip(&preds) {
            for (i, row) in (r.row_start..r.row_end).enumerate() {
                for (j, col) in (r.col_start..r.col_end).enumerate() {
                    for (a, &b) in sum.token_mut(row, col).iter_mut().zip(p.token(i, j)) {
                        *a += b;
                    }
                }
            }
        }
        let counts = coverage_counts(h, w, &windows);
        for (tok, &n) in counts.iter().enumerate() {
            let inv = T::one() / T::of_usize(n);
            for a in &mut sum.data_mut()[tok * c..(tok + 1) * c] {
                *a *= inv;
            }
        }
        Ok(sum)
    }
}
