//! Two-axis rotary position encoding.
//!
//! Within each head, the first half of the channels rotates with the token's
//! row and the second half with its column. Each half is split into adjacent
//! pairs `(2i, 2i + 1)` rotated by `pos · base^(-2i / half)`.

use super::AttentionConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::SpatialTensor;

/// Precomputed per-pair frequencies for one head.
#[derive(Clone, Debug)]
pub(crate) struct RopeTable {
    head_dim: usize,
    freqs: Vec<f64>,
}

impl RopeTable {
    pub(crate) fn new(cfg: &AttentionConfig, channels: usize) -> Result<Self> {
        let head_dim = cfg.head_dim(channels)?;
        if head_dim % 4 != 0 {
            return Err(Error::Config(format!(
                "rope needs head_dim divisible by 4, got {head_dim}"
            )));
        }
        let half = head_dim / 2;
        let freqs = (0..half / 2)
            .map(|i| cfg.rope_base.powf(-(2.0 * i as f64) / half as f64))
            .collect();
        Ok(RopeTable { head_dim, freqs })
    }

    /// Rotates one token's channel vector in place for position `(row, col)`.
    pub(crate) fn rotate<T: Scalar>(&self, token: &mut [T], row: usize, col: usize) {
        let half = self.head_dim / 2;
        for head in token.chunks_exact_mut(self.head_dim) {
            let (row_part, col_part) = head.split_at_mut(half);
            rotate_pairs(row_part, row as f64, &self.freqs);
            rotate_pairs(col_part, col as f64, &self.freqs);
        }
    }
}

fn rotate_pairs<T: Scalar>(part: &mut [T], pos: f64, freqs: &[f64]) {
    if pos == 0.0 {
        return;
    }
    for (pair, &f) in part.chunks_exact_mut(2).zip(freqs) {
        let (sin, cos) = (pos * f).sin_cos();
        let (sin, cos) = (T::of(sin), T::of(cos));
        let (x, y) = (pair[0], pair[1]);
        pair[0] = x * cos - y * sin;
        pair[1] = x * sin + y * cos;
    }
}

/// Applies rotary encoding using absolute positions `(row + row_offset, col + col_offset)`.
pub fn rope_2d<T: Scalar>(
    t: &SpatialTensor<T>,
    row_offset: usize,
    col_offset: usize,
    cfg: &AttentionConfig,
) -> Result<SpatialTensor<T>> {
    if !cfg.use_rope {
        return Err(Error::Config("rope_2d called with use_rope disabled".into()));
    }
    let table = RopeTable::new(cfg, t.channels())?;
    Ok(apply_table(t, row_offset, col_offset, &table))
}

pub(crate) fn apply_table<T: Scalar>(
    t: &SpatialTensor<T>,
    row_offset: usize,
    col_offset: usize,
    table: &RopeTable,
) -> SpatialTensor<T> {
    let mut out = t.clone();
    for r in 0..t.height() {
        for c in 0..t.width() {
            table.rotate(out.token_mut(r, c), r + row_offset, c + col_offset);
        }
    }
    out
}
