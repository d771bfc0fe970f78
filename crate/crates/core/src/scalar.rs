//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type: `f32` or `f64`.
///
/// The numeric code is written once against this trait. The crate root
/// exports `f64` aliases, which is what the pipeline and the CLI use.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` constant.
    fn of(value: f64) -> Self;

    fn of_usize(value: usize) -> Self {
        Self::of(value as f64)
    }

    fn to_f64_lossy(self) -> f64;

    /// Replaces every element with its exponential.
    fn exp_in_place(xs: &mut [Self]) {
        for x in xs {
            *x = x.exp();
        }
    }
}

impl Scalar for f32 {
    #[inline]
    fn of(value: f64) -> Self {
        value as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(value: f64) -> Self {
        value
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }

    fn exp_in_place(xs: &mut [Self]) {
        for x in xs {
            *x = exp_f64(*x);
        }
    }
}

const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
/// 1/n! for n = 13 down to 2.
const EXP_TAYLOR: [f64; 12] = [
    1.0 / 6_227_020_800.0,
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    0.5,
];

/// Branch-free `exp` that the compiler can vectorize.
///
/// `x = k·ln2 + r` with `|r| ≤ ln2/2` (up to rounding of `k`), a degree-13 Taylor polynomial for
/// `e^r`, and `2^k` applied in two halves so results down to the subnormal
/// range stay exact in the exponent. Inputs below -745 return 0.
#[inline]
pub fn exp_f64(x: f64) -> f64 {
    // Adding 1.5·2^52 rounds to the nearest integer and leaves it in the low mantissa bits.
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-745.5, 709.7);
    let shifted = x.mul_add(std::f64::consts::LOG2_E, SHIFTER);
    let k = shifted - SHIFTER;
    let r = k.mul_add(-LN2_LO, k.mul_add(-LN2_HI, x));
    let mut p = EXP_TAYLOR[0];
    for &c in &EXP_TAYLOR[1..] {
        p = p.mul_add(r, c);
    }
    p = p.mul_add(r, 1.0);
    p = p.mul_add(r, 1.0);
    let k = shifted.to_bits().wrapping_sub(SHIFTER.to_bits()) as i64;
    let k1 = k >> 1;
    let k2 = k - k1;
    let scale1 = f64::from_bits(((k1 + 1023) as u64) << 52);
    let scale2 = f64::from_bits(((k2 + 1023) as u64) << 52);
    p * scale1 * scale2
}
