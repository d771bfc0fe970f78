//! Dense `height × width × channels` tensors, row-major with channels fastest.
//!
//! All operations return fresh tensors; inputs are never modified except by
//! the explicitly `&mut` block writer.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Half-open rectangle `[row_start, row_end) × [col_start, col_end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub row_start: usize,
    pub col_start: usize,
    pub row_end: usize,
    pub col_end: usize,
}

impl Rect {
    pub fn new(row_start: usize, col_start: usize, row_end: usize, col_end: usize) -> Result<Self> {
        if row_start >= row_end || col_start >= col_end {
            return Err(Error::param(format!(
                "empty rect rows [{row_start},{row_end}) cols [{col_start},{col_end})"
            )));
        }
        Ok(Rect {
            row_start,
            col_start,
            row_end,
            col_end,
        })
    }

    /// Rect of the given size anchored at `(row, col)`.
    pub fn at(row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        Rect::new(row, col, row + height, col + width)
    }

    pub fn full(height: usize, width: usize) -> Self {
        Rect {
            row_start: 0,
            col_start: 0,
            row_end: height,
            col_end: width,
        }
    }

    pub fn height(&self) -> usize {
        self.row_end - self.row_start
    }

    pub fn width(&self) -> usize {
        self.col_end - self.col_start
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.row_start <= other.row_start
            && self.col_start <= other.col_start
            && other.row_end <= self.row_end
            && other.col_end <= self.col_end
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_start..self.row_end).contains(&row) && (self.col_start..self.col_end).contains(&col)
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.row_end <= height && self.col_end <= width
    }

    /// Intersection, or `None` when the rects do not overlap.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let r0 = self.row_start.max(other.row_start);
        let c0 = self.col_start.max(other.col_start);
        let r1 = self.row_end.min(other.row_end);
        let c1 = self.col_end.min(other.col_end);
        Rect::new(r0, c0, r1, c1).ok()
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{},{})x[{},{})",
            self.row_start, self.row_end, self.col_start, self.col_end
        )
    }
}

/// Resampling kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    /// Mean over each `f × f` block; target extents must divide the source.
    AreaDown,
    /// Bilinear with half-pixel centers (align-corners false) and edge clamping.
    Bilinear,
}

#[derive(Clone, PartialEq)]
pub struct SpatialTensor<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T> fmt::Debug for SpatialTensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialTensor")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> SpatialTensor<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "extents must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "buffer of {} values for {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(SpatialTensor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "extents must be positive");
        SpatialTensor {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a tensor from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut out = Self::zeros(height, width, channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    out.data[(r * width + c) * channels + ch] = f(r, c, ch);
                }
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> T {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: T) {
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }

    /// Channel vector of one token.
    #[inline]
    pub fn token(&self, row: usize, col: usize) -> &[T] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn token_mut(&mut self, row: usize, col: usize) -> &mut [T] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    fn check_rect(&self, rect: &Rect) -> Result<()> {
        if rect.fits_in(self.height, self.width) {
            Ok(())
        } else {
            Err(Error::Bounds {
                rect: *rect,
                height: self.height,
                width: self.width,
            })
        }
    }

    pub fn crop(&self, rect: &Rect) -> Result<Self> {
        self.check_rect(rect)?;
        let d = self.channels;
        let mut data = Vec::with_capacity(rect.area() * d);
        for r in rect.row_start..rect.row_end {
            let start = (r * self.width + rect.col_start) * d;
            let end = (r * self.width + rect.col_end) * d;
            data.extend_from_slice(&self.data[start..end]);
        }
        Ok(SpatialTensor {
            height: rect.height(),
            width: rect.width(),
            channels: d,
            data,
        })
    }

    /// Overwrites the region `at` with `src` in place.
    pub fn write_block(&mut self, src: &Self, at: &Rect) -> Result<()> {
        self.check_rect(at)?;
        if src.height != at.height() || src.width != at.width() || src.channels != self.channels {
            return Err(Error::shape(format!(
                "block {:?} does not fit rect {at} with {} channels",
                src.shape(),
                self.channels
            )));
        }
        let d = self.channels;
        for (i, r) in (at.row_start..at.row_end).enumerate() {
            let dst = (r * self.width + at.col_start) * d;
            let row_len = at.width() * d;
            self.data[dst..dst + row_len].copy_from_slice(&src.data[i * row_len..(i + 1) * row_len]);
        }
        Ok(())
    }

    /// Copy of `self` with the region `at` replaced by `src`.
    pub fn with_block(&self, src: &Self, at: &Rect) -> Result<Self> {
        let mut out = self.clone();
        out.write_block(src, at)?;
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        self.with_data(self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, "elementwise op")?;
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    fn with_data(&self, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        SpatialTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|x| x * factor)
    }

    /// `a·self + b·other`.
    pub fn lincomb(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "difference")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn resample(&self, new_h: usize, new_w: usize, mode: Resample) -> Result<Self> {
        if new_h == 0 || new_w == 0 {
            return Err(Error::param(format!("resample target {new_h}x{new_w} must be positive")));
        }
        match mode {
            Resample::AreaDown => self.area_down(new_h, new_w),
            Resample::Bilinear => Ok(self.bilinear(new_h, new_w)),
        }
    }

    fn area_down(&self, new_h: usize, new_w: usize) -> Result<Self> {
        if self.height % new_h != 0 || self.width % new_w != 0 {
            return Err(Error::param(format!(
                "area_down {}x{} -> {new_h}x{new_w} needs integer factors",
                self.height, self.width
            )));
        }
        let fh = self.height / new_h;
        let fw = self.width / new_w;
        let d = self.channels;
        let norm = T::one() / T::of_usize(fh * fw);
        let mut out = Self::zeros(new_h, new_w, d);
        for r in 0..new_h {
            for c in 0..new_w {
                let acc = out.token_mut(r, c);
                for rr in r * fh..(r + 1) * fh {
                    for cc in c * fw..(c + 1) * fw {
                        let start = (rr * self.width + cc) * d;
                        for (a, &x) in acc.iter_mut().zip(&self.data[start..start + d]) {
                            *a += x;
                        }
                    }
                }
                for a in acc.iter_mut() {
                    *a *= norm;
                }
            }
        }
        Ok(out)
    }

    fn bilinear(&self, new_h: usize, new_w: usize) -> Self {
        let rows = axis_taps::<T>(self.height, new_h);
        let cols = axis_taps::<T>(self.width, new_w);
        let d = self.channels;
        let mut out = Self::zeros(new_h, new_w, d);
        for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (c, &(c0, c1, fc)) in cols.iter().enumerate() {
                let w00 = (T::one() - fr) * (T::one() - fc);
                let w01 = (T::one() - fr) * fc;
                let w10 = fr * (T::one() - fc);
                let w11 = fr * fc;
                let (a, b, e, g) = (
                    self.token(r0, c0),
                    self.token(r0, c1),
                    self.token(r1, c0),
                    self.token(r1, c1),
                );
                let dst = &mut out.data[(r * new_w + c) * d..(r * new_w + c + 1) * d];
                for ch in 0..d {
                    dst[ch] = w00 * a[ch] + w01 * b[ch] + w10 * e[ch] + w11 * g[ch];
                }
            }
        }
        out
    }

    /// Upsamples a coarse tensor by integer factors so that the area mean of
    /// every `fh × fw` output block equals the coarse value it came from.
    ///
    /// Bilinear interpolation plus a per-block constant correction. Area-down
    /// of the result returns `self` exactly, which makes the low-pass of
    /// [`SpatialTensor::freq_split`] a projection.
    pub fn mean_preserving_upsample(&self, fh: usize, fw: usize) -> Result<Self> {
        let (h, w) = (self.height * fh, self.width * fw);
        let smooth = self.bilinear(h, w);
        let drift = self.sub(&smooth.area_down(self.height, self.width)?)?;
        let mut out = smooth;
        for r in 0..h {
            for c in 0..w {
                let corr = drift.token(r / fh, c / fw);
                for (x, &dx) in out.token_mut(r, c).iter_mut().zip(corr) {
                    *x += dx;
                }
            }
        }
        Ok(out)
    }

    /// Low-pass component: area-down by `ratio`, then mean-preserving upsample.
    pub fn low_pass(&self, ratio: usize) -> Result<Self> {
        if ratio == 0 || self.height % ratio != 0 || self.width % ratio != 0 {
            return Err(Error::param(format!(
                "frequency ratio {ratio} must divide {}x{}",
                self.height, self.width
            )));
        }
        if ratio == 1 {
            return Ok(self.clone());
        }
        self.area_down(self.height / ratio, self.width / ratio)?
            .mean_preserving_upsample(ratio, ratio)
    }

    /// Splits into `(low, high)` with `low + high == self`.
    pub fn freq_split(&self, ratio: usize) -> Result<(Self, Self)> {
        let low = self.low_pass(ratio)?;
        let high = self.sub(&low)?;
        Ok((low, high))
    }
}

/// Source indices and blend factor for each output sample along one axis.
fn axis_taps<T: Scalar>(src: usize, dst: usize) -> Vec<(usize, usize, T)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = if i0 == src - 1 { 0.0 } else { pos - i0 as f64 };
            (i0, i1, T::of(frac))
        })
        .collect()
}
