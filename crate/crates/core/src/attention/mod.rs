//! Exact softmax self-attention and neighborhood patch attention.
//!
//! Neighborhood patch attention (NPA) tiles the query tensor into
//! non-overlapping `native/2` patches. Each patch attends to a `native`-sized
//! key/value window centered on it, so attention cost grows with the number
//! of tokens instead of its square while every token still sees a full
//! native-resolution neighborhood.

mod kernel;
mod npa;
mod patch;
mod rope;
mod shift;

pub use npa::{full_attention, joint_attention, npa_attention, npa_attention_windows, NpaOutput};
pub use patch::{build_patch_set, sliding_patch_count, sliding_windows, PatchSet, PatchSpec};
pub use rope::rope_2d;
pub use shift::{apply_query_window_shift, shifted_plan, QueryShift, ShiftedPlan, Window};

pub(crate) use kernel::{attend, Tokens};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub use_rope: bool,
    pub rope_base: f64,
}

impl AttentionConfig {
    pub fn new(num_heads: usize) -> Self {
        AttentionConfig {
            num_heads,
            use_rope: false,
            rope_base: 10_000.0,
        }
    }

    pub fn with_rope(mut self, use_rope: bool) -> Self {
        self.use_rope = use_rope;
        self
    }

    pub fn head_dim(&self, channels: usize) -> Result<usize> {
        if self.num_heads == 0 || channels % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide {channels} channels",
                self.num_heads
            )));
        }
        let hd = channels / self.num_heads;
        if self.use_rope && hd % 2 != 0 {
            return Err(Error::Config(format!("rope needs an even head_dim, got {hd}")));
        }
        Ok(hd)
    }

    /// `1/√head_dim`.
    pub fn scale<T: Scalar>(&self, channels: usize) -> Result<T> {
        Ok(T::of(1.0 / (self.head_dim(channels)? as f64).sqrt()))
    }
}

/// `len × channels` matrix of non-spatial tokens, channels fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenMatrix<T> {
    pub len: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> TokenMatrix<T> {
    pub fn new(len: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != len * channels {
            return Err(Error::shape(format!(
                "token matrix {len}x{channels} given {} values",
                data.len()
            )));
        }
        Ok(TokenMatrix { len, channels, data })
    }

    pub fn zeros(len: usize, channels: usize) -> Self {
        TokenMatrix {
            len,
            channels,
            data: vec![T::zero(); len * channels],
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

/// Context (text) tokens that join self-attention as extra queries and keys.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextTokens<T> {
    pub q: TokenMatrix<T>,
    pub k: TokenMatrix<T>,
    pub v: TokenMatrix<T>,
}

impl<T: Scalar> ContextTokens<T> {
    pub fn new(q: TokenMatrix<T>, k: TokenMatrix<T>, v: TokenMatrix<T>) -> Result<Self> {
        if q.len != k.len || k.len != v.len || q.channels != k.channels || k.channels != v.channels {
            return Err(Error::shape("context q/k/v disagree in shape".to_string()));
        }
        Ok(ContextTokens { q, k, v })
    }

    pub fn empty(channels: usize) -> Self {
        ContextTokens {
            q: TokenMatrix::zeros(0, channels),
            k: TokenMatrix::zeros(0, channels),
            v: TokenMatrix::zeros(0, channels),
        }
    }

    pub fn len(&self) -> usize {
        self.q.len
    }

    pub fn is_empty(&self) -> bool {
        self.q.len == 0
    }

    pub fn channels(&self) -> usize {
        self.q.channels
    }
}
