//! Tiled multi-head softmax attention over flat token lists.
//!
//! Keys are consumed in fixed tiles with an online (running max) softmax, so
//! the working set per query block stays in cache. The result for a query
//! depends only on that query and the ordered key list, never on how query
//! blocks are scheduled across threads.

use rayon::prelude::*;

use crate::scalar::Scalar;

const QUERY_BLOCK: usize = 64;
const KEY_TILE: usize = 256;

/// Token-major matrix view: `rows × channels`, channels fastest.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tokens<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
}

/// Computes `softmax(q kᵀ · scale) v` independently per head, where heads are
/// contiguous channel groups of width `channels / heads`.
///
/// Returns `q.rows × channels` values.
pub(crate) fn attend<T: Scalar>(
    q: Tokens<'_, T>,
    k: Tokens<'_, T>,
    v: Tokens<'_, T>,
    channels: usize,
    heads: usize,
    scale: T,
) -> Vec<T> {
    debug_assert_eq!(k.rows, v.rows);
    debug_assert_eq!(channels % heads, 0);
    let hd = channels / heads;
    let (nq, nk) = (q.rows, k.rows);
    let mut out = vec![T::zero(); nq * channels];
    if nq == 0 {
        return out;
    }
    if nk == 0 {
        return out;
    }

    for head in 0..heads {
        let c0 = head * hd;
        let qh = gather_head(q.data, nq, channels, c0, hd);
        let packed = PackedHead::new(k.data, v.data, nk, channels, c0, hd);

        let blocks: Vec<Vec<T>> = qh
            .par_chunks(QUERY_BLOCK * hd)
            .map(|qb| packed.attend_block(qb, scale))
            .collect();

        for (bi, block) in blocks.iter().enumerate() {
            for (i, row) in block.chunks_exact(hd).enumerate() {
                let t = bi * QUERY_BLOCK + i;
                out[t * channels + c0..t * channels + c0 + hd].copy_from_slice(row);
            }
        }
    }
    out
}

fn gather_head<T: Scalar>(data: &[T], rows: usize, channels: usize, c0: usize, hd: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * hd);
    for r in 0..rows {
        out.extend_from_slice(&data[r * channels + c0..r * channels + c0 + hd]);
    }
    out
}

const MR: usize = 4;
const NR: usize = 16;

const LANES: usize = 8;

/// Maximum with a fixed 8-lane reduction order.
fn lane_max<T: Scalar>(xs: &[T]) -> T {
    let mut lanes = [T::neg_infinity(); LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for chunk in &mut chunks {
        for (l, &x) in lanes.iter_mut().zip(chunk) {
            *l = if x > *l { x } else { *l };
        }
    }
    let mut m = lanes.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    for &x in chunks.remainder() {
        m = m.max(x);
    }
    m
}

/// Sum with a fixed 8-lane reduction order.
fn lane_sum<T: Scalar>(xs: &[T]) -> T {
    let mut lanes = [T::zero(); LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for chunk in &mut chunks {
        for (l, &x) in lanes.iter_mut().zip(chunk) {
            *l += x;
        }
    }
    let mut total = lanes.iter().fold(T::zero(), |acc, &x| acc + x);
    for &x in chunks.remainder() {
        total += x;
    }
    total
}

fn round_up(x: usize, m: usize) -> usize {
    x.div_ceil(m) * m
}

/// Keys and values of one head repacked into `NR`-wide panels.
///
/// `keys`: one panel per `NR` keys, laid out `[head_dim][NR]`.
/// `values`: one panel per `NR` channels, laid out `[keys][NR]`.
/// Padding entries are zero and never reach a softmax.
struct PackedHead<T> {
    keys: Vec<T>,
    values: Vec<T>,
    nk: usize,
    hd: usize,
    hd_pad: usize,
}

impl<T: Scalar> PackedHead<T> {
    fn new(k: &[T], v: &[T], nk: usize, channels: usize, c0: usize, hd: usize) -> Self {
        let nk_pad = round_up(nk, NR);
        let hd_pad = round_up(hd, NR);
        let mut keys = vec![T::zero(); nk_pad * hd];
        for j in 0..nk {
            let (panel, lane) = (j / NR, j % NR);
            for c in 0..hd {
                keys[panel * hd * NR + c * NR + lane] = k[j * channels + c0 + c];
            }
        }
        let mut values = vec![T::zero(); hd_pad * nk];
        for j in 0..nk {
            for c in 0..hd {
                let (panel, lane) = (c / NR, c % NR);
                values[panel * nk * NR + j * NR + lane] = v[j * channels + c0 + c];
            }
        }
        PackedHead {
            keys,
            values,
            nk,
            hd,
            hd_pad,
        }
    }

    /// Softmax attention for up to `QUERY_BLOCK` query rows (`nb × hd`).
    fn attend_block(&self, qb: &[T], scale: T) -> Vec<T> {
        let hd = self.hd;
        let nb = qb.len() / hd;
        let rows = round_up(nb, MR);
        let mut qs = vec![T::zero(); rows * hd];
        for (dst, &x) in qs.iter_mut().zip(qb) {
            *dst = x * scale;
        }
        let mut acc = vec![T::zero(); rows * self.hd_pad];
        let mut running_max = vec![T::neg_infinity(); nb];
        let mut denom = vec![T::zero(); nb];
        let mut scores = vec![T::zero(); rows * KEY_TILE];

        let mut j0 = 0;
        while j0 < self.nk {
            let tile = KEY_TILE.min(self.nk - j0);
            self.scores(&qs, rows, j0, tile, &mut scores);

            for b in 0..nb {
                let s = &mut scores[b * KEY_TILE..b * KEY_TILE + tile];
                let new_max = running_max[b].max(lane_max(s));
                let correction = (running_max[b] - new_max).exp();
                if correction != T::one() {
                    for a in &mut acc[b * self.hd_pad..(b + 1) * self.hd_pad] {
                        *a *= correction;
                    }
                }
                for sj in s.iter_mut() {
                    *sj -= new_max;
                }
                T::exp_in_place(s);
                denom[b] = denom[b] * correction + lane_sum(s);
                running_max[b] = new_max;
            }

            self.accumulate_values(&scores, rows, j0, tile, &mut acc);
            j0 += tile;
        }

        let mut out = Vec::with_capacity(nb * hd);
        for b in 0..nb {
            let inv = T::one() / denom[b];
            out.extend(acc[b * self.hd_pad..b * self.hd_pad + hd].iter().map(|&a| a * inv));
        }
        out
    }

    /// `scores[r][j] = q_r · k_{j0+j}` for `j < tile` (rounded up to a panel).
    fn scores(&self, qs: &[T], rows: usize, j0: usize, tile: usize, scores: &mut [T]) {
        let hd = self.hd;
        debug_assert_eq!(j0 % NR, 0);
        for jp in 0..tile.div_ceil(NR) {
            let panel = &self.keys[(j0 / NR + jp) * hd * NR..(j0 / NR + jp + 1) * hd * NR];
            for i in (0..rows).step_by(MR) {
                let mut t = [[T::zero(); NR]; MR];
                for (c, brow) in panel.chunks_exact(NR).enumerate() {
                    for (r, row) in t.iter_mut().enumerate() {
                        let av = qs[(i + r) * hd + c];
                        for (x, &bv) in row.iter_mut().zip(brow) {
                            *x = av.mul_add(bv, *x);
                        }
                    }
                }
                for (r, row) in t.iter().enumerate() {
                    let at = (i + r) * KEY_TILE + jp * NR;
                    scores[at..at + NR].copy_from_slice(row);
                }
            }
        }
    }

    /// `acc[r][c] += Σ_{j < tile} p[r][j] · v_{j0+j}[c]`.
    fn accumulate_values(&self, probs: &[T], rows: usize, j0: usize, tile: usize, acc: &mut [T]) {
        let nk = self.nk;
        for cp in 0..self.hd_pad / NR {
            let panel = &self.values[cp * nk * NR + j0 * NR..cp * nk * NR + (j0 + tile) * NR];
            for i in (0..rows).step_by(MR) {
                let mut t = [[T::zero(); NR]; MR];
                for (p, brow) in panel.chunks_exact(NR).enumerate() {
                    for (r, row) in t.iter_mut().enumerate() {
                        let av = probs[(i + r) * KEY_TILE + p];
                        for (x, &bv) in row.iter_mut().zip(brow) {
                            *x = av.mul_add(bv, *x);
                        }
                    }
                }
                for (r, row) in t.iter().enumerate() {
                    let at = (i + r) * self.hd_pad + cp * NR;
                    for (o, &x) in acc[at..at + NR].iter_mut().zip(row) {
                        *o += x;
                    }
                }
            }
        }
    }
}

