#![allow(dead_code)]

use hires_core::tensor::{Rect, SpatialTensor};
use hires_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random(h: usize, w: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SpatialTensor::from_fn(h, w, d, |_, _, _| rng.sample(StandardNormal))
}

pub fn random_rows(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Rotates `v` (one token, all heads) for position `(row, col)`, written
/// directly from the definition.
pub fn rope_token(v: &[f64], row: usize, col: usize, head_dim: usize, base: f64) -> Vec<f64> {
    let half = head_dim / 2;
    let mut out = v.to_vec();
    for h in 0..v.len() / head_dim {
        for (part, pos) in [(0, row), (1, col)] {
            for i in 0..half / 2 {
                let theta = pos as f64 * base.powf(-(2.0 * i as f64) / half as f64);
                let a = h * head_dim + part * half + 2 * i;
                let (x, y) = (v[a], v[a + 1]);
                out[a] = x * theta.cos() - y * theta.sin();
                out[a + 1] = x * theta.sin() + y * theta.cos();
            }
        }
    }
    out
}

/// Softmax attention of one query over explicit key/value rows, per head,
/// with a plain double loop.
pub fn attend_one(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], heads: usize) -> Vec<f64> {
    let d = q.len();
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; d];
    for h in 0..heads {
        let r = h * hd..(h + 1) * hd;
        let scores: Vec<f64> = keys
            .iter()
            .map(|k| q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for (wgt, v) in e.iter().zip(values) {
            for c in r.clone() {
                out[c] += wgt / z * v[c];
            }
        }
    }
    out
}

pub struct OracleRope {
    pub head_dim: usize,
    pub base: f64,
}

/// Tokens of `rect` from `t`, rotated by absolute position when `rope` is set.
pub fn rect_tokens(t: &Tensor, rect: &Rect, rope: Option<&OracleRope>) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for r in rect.row_start..rect.row_end {
        for c in rect.col_start..rect.col_end {
            let tok = t.token(r, c).to_vec();
            out.push(match rope {
                Some(p) => rope_token(&tok, r, c, p.head_dim, p.base),
                None => tok,
            });
        }
    }
    out
}
