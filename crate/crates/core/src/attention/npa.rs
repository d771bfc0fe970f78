use rayon::prelude::*;

use super::kernel::{attend, Tokens};
use super::patch::PatchSet;
use super::rope::{apply_table, RopeTable};
use super::shift::{shifted_plan, QueryShift, Window};
use super::{AttentionConfig, ContextTokens, TokenMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Rect, SpatialTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct NpaOutput<T> {
    pub latent: SpatialTensor<T>,
    /// Context outputs averaged over all patches; `None` without context.
    pub context: Option<TokenMatrix<T>>,
}

fn check_qkv<T: Scalar>(q: &SpatialTensor<T>, k: &SpatialTensor<T>, v: &SpatialTensor<T>) -> Result<()> {
    if q.channels() != k.channels() || k.channels() != v.channels() {
        return Err(Error::shape(format!(
            "q/k/v channels {} / {} / {}",
            q.channels(),
            k.channels(),
            v.channels()
        )));
    }
    if k.shape() != v.shape() {
        return Err(Error::shape(format!("k {:?} vs v {:?}", k.shape(), v.shape())));
    }
    Ok(())
}

fn check_context<T: Scalar>(ctx: &ContextTokens<T>, channels: usize) -> Result<()> {
    if ctx.channels() != channels {
        return Err(Error::shape(format!(
            "context has {} channels, latent has {channels}",
            ctx.channels()
        )));
    }
    Ok(())
}

/// Exact softmax attention of every query token over every key token.
pub fn full_attention<T: Scalar>(
    q: &SpatialTensor<T>,
    k: &SpatialTensor<T>,
    v: &SpatialTensor<T>,
    cfg: &AttentionConfig,
) -> Result<SpatialTensor<T>> {
    check_qkv(q, k, v)?;
    let d = q.channels();
    let scale = cfg.scale::<T>(d)?;
    let (q, k) = if cfg.use_rope {
        let table = RopeTable::new(cfg, d)?;
        (apply_table(q, 0, 0, &table), apply_table(k, 0, 0, &table))
    } else {
        (q.clone(), k.clone())
    };
    let out = attend(
        Tokens { data: q.data(), rows: q.tokens() },
        Tokens { data: k.data(), rows: k.tokens() },
        Tokens { data: v.data(), rows: v.tokens() },
        d,
        cfg.num_heads,
        scale,
    );
    SpatialTensor::new(q.height(), q.width(), d, out)
}

/// Full attention over latent tokens joined with context tokens, which act
/// as both queries and keys. Context tokens sit at rope position `(0, 0)`.
pub fn joint_attention<T: Scalar>(
    q: &SpatialTensor<T>,
    k: &SpatialTensor<T>,
    v: &SpatialTensor<T>,
    ctx: &ContextTokens<T>,
    cfg: &AttentionConfig,
) -> Result<(SpatialTensor<T>, TokenMatrix<T>)> {
    check_qkv(q, k, v)?;
    let full = Window {
        q: Rect::full(q.height(), q.width()),
        kv: Rect::full(k.height(), k.width()),
    };
    if q.shape() != k.shape() {
        return Err(Error::shape("joint attention needs congruent q and k".to_string()));
    }
    let prepared = Prepared::new(cfg, q.channels(), Some(ctx))?;
    let (lat, c) = prepared.window(q, k, v, &full)?;
    Ok((lat, c.expect("context present")))
}

/// Neighborhood patch attention.
///
/// Every query patch of `ps` attends to its key/value window (plus context
/// tokens, when given) and the results are reassembled at the query
/// positions. With `shift`, the query grid is offset over a padded canvas
/// first.
pub fn npa_attention<T: Scalar>(
    q: &SpatialTensor<T>,
    k: &SpatialTensor<T>,
    v: &SpatialTensor<T>,
    ps: &PatchSet,
    cfg: &AttentionConfig,
    ctx: Option<&ContextTokens<T>>,
    shift: Option<QueryShift>,
) -> Result<NpaOutput<T>> {
    if q.height() != ps.extent_h || q.width() != ps.extent_w {
        return Err(Error::shape(format!(
            "tensor {}x{} does not match patch plan {}x{}",
            q.height(),
            q.width(),
            ps.extent_h,
            ps.extent_w
        )));
    }
    let windows = match shift {
        Some(shift) => shifted_plan(ps.extent_h, ps.extent_w, ps.native_h, ps.native_w, shift)?.windows,
        None => ps.windows(),
    };
    npa_attention_windows(q, k, v, &windows, cfg, ctx)
}

/// Patch attention over an explicit list of windows whose query rects tile `q`.
pub fn npa_attention_windows<T: Scalar>(
    q: &SpatialTensor<T>,
    k: &SpatialTensor<T>,
    v: &SpatialTensor<T>,
    windows: &[Window],
    cfg: &AttentionConfig,
    ctx: Option<&ContextTokens<T>>,
) -> Result<NpaOutput<T>> {
    check_qkv(q, k, v)?;
    if q.shape() != k.shape() {
        return Err(Error::shape(format!("q {:?} vs k {:?}", q.shape(), k.shape())));
    }
    if windows.is_empty() {
        return Err(Error::param("no patch windows".to_string()));
    }
    let prepared = Prepared::new(cfg, q.channels(), ctx)?;

    let results: Vec<_> = windows
        .par_iter()
        .map(|w| prepared.window(q, k, v, w))
        .collect::<Result<_>>()?;

    let d = q.channels();
    let mut latent = SpatialTensor::zeros(q.height(), q.width(), d);
    let mut context = ctx.map(|c| TokenMatrix::zeros(c.len(), d));
    for (w, (block, ctx_out)) in windows.iter().zip(&results) {
        latent.write_block(block, &w.q)?;
        if let (Some(acc), Some(out)) = (context.as_mut(), ctx_out) {
            for (a, &x) in acc.data.iter_mut().zip(&out.data) {
                *a += x;
            }
        }
    }
    if let Some(acc) = context.as_mut() {
        let inv = T::one() / T::of_usize(windows.len());
        for a in &mut acc.data {
            *a *= inv;
        }
    }
    Ok(NpaOutput { latent, context })
}

struct Prepared<'a, T> {
    cfg: &'a AttentionConfig,
    rope: Option<RopeTable>,
    ctx: Option<&'a ContextTokens<T>>,
    scale: T,
}

impl<'a, T: Scalar> Prepared<'a, T> {
    fn new(cfg: &'a AttentionConfig, channels: usize, ctx: Option<&'a ContextTokens<T>>) -> Result<Self> {
        let scale = cfg.scale::<T>(channels)?;
        let rope = if cfg.use_rope {
            Some(RopeTable::new(cfg, channels)?)
        } else {
            None
        };
        if let Some(ctx) = ctx {
            check_context(ctx, channels)?;
        }
        Ok(Prepared { cfg, rope, ctx, scale })
    }

    /// Attention for one window; returns the query block and, with context,
    /// this window's context outputs.
    fn window(
        &self,
        q: &SpatialTensor<T>,
        k: &SpatialTensor<T>,
        v: &SpatialTensor<T>,
        w: &Window,
    ) -> Result<(SpatialTensor<T>, Option<TokenMatrix<T>>)> {
        let d = q.channels();
        let mut qc = q.crop(&w.q)?;
        let mut kc = k.crop(&w.kv)?;
        let vc = v.crop(&w.kv)?;
        if let Some(table) = &self.rope {
            qc = apply_table(&qc, w.q.row_start, w.q.col_start, table);
            kc = apply_table(&kc, w.kv.row_start, w.kv.col_start, table);
        }
        let Some(ctx) = self.ctx else {
            let out = attend(
                Tokens { data: qc.data(), rows: qc.tokens() },
                Tokens { data: kc.data(), rows: kc.tokens() },
                Tokens { data: vc.data(), rows: vc.tokens() },
                d,
                self.cfg.num_heads,
                self.scale,
            );
            return Ok((SpatialTensor::new(qc.height(), qc.width(), d, out)?, None));
        };

        // Duplicated context tokens take the window's top-left position.
        let (pr, pc) = (w.kv.row_start, w.kv.col_start);
        let rope_ctx = |m: &TokenMatrix<T>| -> Vec<T> {
            let mut data = m.data.clone();
            if let Some(table) = &self.rope {
                for row in data.chunks_exact_mut(d) {
                    table.rotate(row, pr, pc);
                }
            }
            data
        };
        let l = ctx.len();
        let mut qs = qc.into_data();
        qs.extend(rope_ctx(&ctx.q));
        let mut ks = kc.into_data();
        ks.extend(rope_ctx(&ctx.k));
        let mut vs = vc.into_data();
        vs.extend_from_slice(&ctx.v.data);
        let nq = w.q.area();
        let nk = w.kv.area();
        let mut out = attend(
            Tokens { data: &qs, rows: nq + l },
            Tokens { data: &ks, rows: nk + l },
            Tokens { data: &vs, rows: nk + l },
            d,
            self.cfg.num_heads,
            self.scale,
        );
        let ctx_out = out.split_off(nq * d);
        Ok((
            SpatialTensor::new(w.q.height(), w.q.width(), d, out)?,
            Some(TokenMatrix::new(l, d, ctx_out)?),
        ))
    }
}
