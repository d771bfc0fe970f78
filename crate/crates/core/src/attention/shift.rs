//! Random shifting of the query patch grid.
//!
//! The query tensor is placed on a canvas enlarged by `native/2` in each
//! axis at a random `(top, left)` offset, and the patch grid is laid over the
//! canvas. Canvas positions outside the real tensor are padding: query
//! tokens there are discarded and never attended to. Each key/value window
//! is re-centered on the real part of its query patch and clamped inside the
//! real tensor, so padding never enters a softmax.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::patch::{build_patch_set, PatchSet};
use crate::error::Result;
use crate::tensor::Rect;

/// Query rect and key/value rect in real tensor coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub q: Rect,
    pub kv: Rect,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryShift {
    pub top: usize,
    pub left: usize,
}

impl QueryShift {
    /// Draws `top ∈ [0, native_h/2]` and `left ∈ [0, native_w/2]` uniformly.
    pub fn sample<R: Rng + ?Sized>(native_h: usize, native_w: usize, rng: &mut R) -> Self {
        QueryShift {
            top: rng.gen_range(0..=native_h / 2),
            left: rng.gen_range(0..=native_w / 2),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedPlan {
    pub shift: QueryShift,
    /// Patch grid on the padded canvas.
    pub canvas: PatchSet,
    /// Effective windows for canvas patches that touch real tokens.
    pub windows: Vec<Window>,
    /// Canvas patch index for each entry of `windows`.
    pub source_patch: Vec<usize>,
    /// Canvas patches lying entirely in padding.
    pub discarded: Vec<usize>,
}

impl PatchSet {
    pub fn windows(&self) -> Vec<Window> {
        self.specs
            .iter()
            .map(|s| Window {
                q: s.q_rect,
                kv: s.kv_rect,
            })
            .collect()
    }
}

fn kv_start(q_real_start: isize, native: usize, extent: usize) -> usize {
    let centered = q_real_start - (native / 4) as isize;
    centered.clamp(0, (extent - native) as isize) as usize
}

/// Builds the shifted plan for a given offset.
pub fn shifted_plan(
    extent_h: usize,
    extent_w: usize,
    native_h: usize,
    native_w: usize,
    shift: QueryShift,
) -> Result<ShiftedPlan> {
    // Validates native/extent geometry before building the canvas.
    build_patch_set(extent_h, extent_w, native_h, native_w)?;
    let shift = QueryShift {
        top: shift.top.min(native_h / 2),
        left: shift.left.min(native_w / 2),
    };
    let canvas = build_patch_set(extent_h + native_h / 2, extent_w + native_w / 2, native_h, native_w)?;
    let real = Rect::at(shift.top, shift.left, extent_h, extent_w)?;
    let mut windows = Vec::new();
    let mut source_patch = Vec::new();
    let mut discarded = Vec::new();
    for spec in &canvas.specs {
        let Some(visible) = spec.q_rect.intersect(&real) else {
            discarded.push(spec.index);
            continue;
        };
        let q = Rect::new(
            visible.row_start - shift.top,
            visible.col_start - shift.left,
            visible.row_end - shift.top,
            visible.col_end - shift.left,
        )?;
        let kr = kv_start(spec.q_rect.row_start as isize - shift.top as isize, native_h, extent_h);
        let kc = kv_start(spec.q_rect.col_start as isize - shift.left as isize, native_w, extent_w);
        windows.push(Window {
            q,
            kv: Rect::at(kr, kc, native_h, native_w)?,
        });
        source_patch.push(spec.index);
    }
    Ok(ShiftedPlan {
        shift,
        canvas,
        windows,
        source_patch,
        discarded,
    })
}

/// Samples an offset from `rng` and builds the shifted plan.
pub fn apply_query_window_shift<R: Rng + ?Sized>(
    extent_h: usize,
    extent_w: usize,
    native_h: usize,
    native_w: usize,
    rng: &mut R,
) -> Result<ShiftedPlan> {
    let shift = QueryShift::sample(native_h, native_w, rng);
    shifted_plan(extent_h, extent_w, native_h, native_w, shift)
}
