//! Query/key-value patch plans for neighborhood patch attention.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Rect;

/// One query patch and the key/value neighborhood it attends to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub index: usize,
    pub q_rect: Rect,
    pub kv_rect: Rect,
}

/// Full extraction plan for an `extent_h × extent_w` tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSet {
    pub extent_h: usize,
    pub extent_w: usize,
    pub native_h: usize,
    pub native_w: usize,
    pub rows: usize,
    pub cols: usize,
    pub specs: Vec<PatchSpec>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Debug listing, one `i: qrect kvrect` line per patch.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        for spec in &self.specs {
            writeln!(out, "{}: {} {}", spec.index, spec.q_rect, spec.kv_rect).unwrap();
        }
        out
    }

    /// Same plan with every key/value window shrunk to its query patch
    /// (no neighborhood context). Used as an ablation.
    pub fn disjoint_kv(&self) -> PatchSet {
        let mut out = self.clone();
        for spec in &mut out.specs {
            spec.kv_rect = spec.q_rect;
        }
        out
    }
}

fn clamp_start(q_start: usize, back: usize, max_start: usize) -> usize {
    q_start.saturating_sub(back).min(max_start)
}

/// Plans non-overlapping `native/2` query patches over an `extent` tensor,
/// each paired with a `native`-sized key/value window centered on it and
/// clamped inside the tensor. Patches are listed row-major.
pub fn build_patch_set(
    extent_h: usize,
    extent_w: usize,
    native_h: usize,
    native_w: usize,
) -> Result<PatchSet> {
    if native_h < 2 || native_w < 2 || native_h % 2 != 0 || native_w % 2 != 0 {
        return Err(Error::param(format!(
            "native extent {native_h}x{native_w} must be even and at least 2"
        )));
    }
    if extent_h < native_h || extent_w < native_w {
        return Err(Error::param(format!(
            "extent {extent_h}x{extent_w} smaller than native {native_h}x{native_w}"
        )));
    }
    let (qh, qw) = (native_h / 2, native_w / 2);
    if extent_h % qh != 0 || extent_w % qw != 0 {
        return Err(Error::param(format!(
            "extent {extent_h}x{extent_w} not divisible by query patch {qh}x{qw}"
        )));
    }
    let rows = (extent_h - qh) / qh + 1;
    let cols = (extent_w - qw) / qw + 1;
    let mut specs = Vec::with_capacity(rows * cols);
    for index in 0..rows * cols {
        let (gr, gc) = (index / cols, index % cols);
        let (qr, qc) = (gr * qh, gc * qw);
        let kr = clamp_start(qr, native_h / 4, extent_h - native_h);
        let kc = clamp_start(qc, native_w / 4, extent_w - native_w);
        specs.push(PatchSpec {
            index,
            q_rect: Rect::at(qr, qc, qh, qw)?,
            kv_rect: Rect::at(kr, kc, native_h, native_w)?,
        });
    }
    Ok(PatchSet {
        extent_h,
        extent_w,
        native_h,
        native_w,
        rows,
        cols,
        specs,
    })
}

/// Number of overlapping native crops taken with the given strides.
pub fn sliding_patch_count(
    extent_h: usize,
    extent_w: usize,
    native_h: usize,
    native_w: usize,
    stride_h: usize,
    stride_w: usize,
) -> Result<usize> {
    Ok(sliding_windows(extent_h, extent_w, native_h, native_w, stride_h, stride_w)?.len())
}

/// Overlapping native-size crops at the given strides, row-major.
pub fn sliding_windows(
    extent_h: usize,
    extent_w: usize,
    native_h: usize,
    native_w: usize,
    stride_h: usize,
    stride_w: usize,
) -> Result<Vec<Rect>> {
    if stride_h == 0 || stride_w == 0 || stride_h > native_h || stride_w > native_w {
        return Err(Error::param(format!(
            "strides {stride_h}x{stride_w} must be positive and at most native {native_h}x{native_w}"
        )));
    }
    if extent_h < native_h || extent_w < native_w {
        return Err(Error::param(format!(
            "extent {extent_h}x{extent_w} smaller than native {native_h}x{native_w}"
        )));
    }
    if (extent_h - native_h) % stride_h != 0 || (extent_w - native_w) % stride_w != 0 {
        return Err(Error::param(format!(
            "strides {stride_h}x{stride_w} do not tile extent {extent_h}x{extent_w} with native {native_h}x{native_w}"
        )));
    }
    let rows = (extent_h - native_h) / stride_h + 1;
    let cols = (extent_w - native_w) / stride_w + 1;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(Rect::at(r * stride_h, c * stride_w, native_h, native_w)?);
        }
    }
    Ok(out)
}
