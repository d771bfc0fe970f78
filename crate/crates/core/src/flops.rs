//! Analytic per-layer cost model and an instrumented multiply-accumulate counter.
//!
//! Counts are multiply-accumulates. Self-attention is counted as the mean of
//! the `QKᵀ` and `AV` products, i.e. `queries · keys · d` per window, which is
//! the normalization that makes a full-attention layer cost `(HW)²d`.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a high-resolution latent is processed by a native-resolution model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// One forward pass with full self-attention over every token.
    #[serde(rename = "base")]
    Base,
    /// Overlapping native crops denoised independently and averaged.
    #[serde(rename = "multidiffusion")]
    MultiDiffusion,
    /// One forward pass with neighborhood patch attention.
    #[serde(rename = "npa")]
    Npa,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Base, Method::MultiDiffusion, Method::Npa];

    pub fn name(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::MultiDiffusion => "multidiffusion",
            Method::Npa => "npa",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}; expected base, multidiffusion or npa")))
    }
}

/// Scale factor `s`, native extent `h × w`, hidden width `d`, conv kernel
/// `k` and context length `l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsParams {
    pub s: u64,
    pub h: u64,
    pub w: u64,
    pub d: u64,
    pub k: u64,
    pub l: u64,
}

impl Default for FlopsParams {
    fn default() -> Self {
        FlopsParams {
            s: 2,
            h: 16,
            w: 16,
            d: 8,
            k: 3,
            l: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub method: Method,
    pub params: FlopsParams,
    pub linear: u128,
    pub conv: u128,
    pub cross_attn: u128,
    pub self_attn: u128,
}

pub const CSV_HEADER: &str = "method,s,h,w,d,k,l,linear,conv,cross_attn,self_attn,total";

impl FlopsReport {
    pub fn total(&self) -> u128 {
        self.linear + self.conv + self.cross_attn + self.self_attn
    }

    /// Same report with every count doubled (one MAC is two FLOPs).
    pub fn to_flops(&self) -> Self {
        FlopsReport {
            linear: 2 * self.linear,
            conv: 2 * self.conv,
            cross_attn: 2 * self.cross_attn,
            self_attn: 2 * self.self_attn,
            ..*self
        }
    }

    pub fn classes(&self) -> [u128; 4] {
        [self.linear, self.conv, self.cross_attn, self.self_attn]
    }

    pub fn csv_row(&self) -> String {
        let p = &self.params;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            p.s,
            p.h,
            p.w,
            p.d,
            p.k,
            p.l,
            self.linear,
            self.conv,
            self.cross_attn,
            self.self_attn,
            self.total()
        )
    }
}

/// Closed-form costs. MultiDiffusion assumes strides of half the native extent.
pub fn analytic_flops(method: Method, p: FlopsParams) -> FlopsReport {
    let (s, h, w, d, k, l) = (
        p.s as u128,
        p.h as u128,
        p.w as u128,
        p.d as u128,
        p.k as u128,
        p.l as u128,
    );
    let hw = h * w;
    let lead = match method {
        Method::Base | Method::Npa => s * s,
        Method::MultiDiffusion => (2 * s - 1) * (2 * s - 1),
    };
    let self_attn = match method {
        Method::Base => s * s * s * s * hw * hw * d,
        Method::MultiDiffusion => lead * hw * hw * d,
        Method::Npa => s * s * hw * hw * d,
    };
    FlopsReport {
        method,
        params: p,
        linear: lead * hw * d * d,
        conv: lead * hw * k * k * d * d,
        cross_attn: lead * hw * l * d,
        self_attn,
    }
}

/// Multiply-accumulate totals captured by a [`FlopCounter`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacCounts {
    pub linear: u128,
    pub conv: u128,
    pub cross_attn: u128,
    pub self_attn: u128,
}

impl MacCounts {
    pub fn into_report(self, method: Method, params: FlopsParams) -> FlopsReport {
        FlopsReport {
            method,
            params,
            linear: self.linear,
            conv: self.conv,
            cross_attn: self.cross_attn,
            self_attn: self.self_attn,
        }
    }
}

/// Thread-safe per-class accumulators. Integer addition commutes, so the
/// totals do not depend on how work was scheduled.
#[derive(Debug, Default)]
pub struct FlopCounter {
    linear: AtomicU64,
    conv: AtomicU64,
    cross_attn: AtomicU64,
    self_attn: AtomicU64,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_linear(&self, macs: u64) {
        self.linear.fetch_add(macs, Ordering::Relaxed);
    }

    pub fn add_conv(&self, macs: u64) {
        self.conv.fetch_add(macs, Ordering::Relaxed);
    }

    pub fn add_cross_attn(&self, macs: u64) {
        self.cross_attn.fetch_add(macs, Ordering::Relaxed);
    }

    pub fn add_self_attn(&self, macs: u64) {
        self.self_attn.fetch_add(macs, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> MacCounts {
        MacCounts {
            linear: self.linear.load(Ordering::Relaxed) as u128,
            conv: self.conv.load(Ordering::Relaxed) as u128,
            cross_attn: self.cross_attn.load(Ordering::Relaxed) as u128,
            self_attn: self.self_attn.load(Ordering::Relaxed) as u128,
        }
    }

    pub fn reset(&self) {
        for c in [&self.linear, &self.conv, &self.cross_attn, &self.self_attn] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

/// `a₁ / b₁ == a₂ / b₂` in exact integer arithmetic, treating `0/0` as equal
/// to any other `0/0`.
pub fn ratios_equal(a1: u128, b1: u128, a2: u128, b2: u128) -> bool {
    if b1 == 0 || b2 == 0 {
        return b1 == b2 && (a1 == 0) == (a2 == 0);
    }
    a1 * b2 == a2 * b1
}
