//! Scalar abstraction shared by the e-predictors, detectors and oracles.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Binary floating point: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Number of mantissa bits including the implicit leading one.
    const MANTISSA_DIGITS: u32;

    /// Additive tolerance used when checking that an e-vector averages to one.
    fn mean_tolerance() -> Self;

    /// Lossless widening to `f64`.
    fn widen(self) -> f64;

    /// Rounds an `f64` to this type.
    fn narrow(x: f64) -> Self;

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize is representable in a float")
    }
}

impl Scalar for f64 {
    const MANTISSA_DIGITS: u32 = f64::MANTISSA_DIGITS;

    fn mean_tolerance() -> Self {
        1e-12
    }

    fn widen(self) -> f64 {
        self
    }

    fn narrow(x: f64) -> Self {
        x
    }
}

impl Scalar for f32 {
    const MANTISSA_DIGITS: u32 = f32::MANTISSA_DIGITS;

    fn mean_tolerance() -> Self {
        1e-5
    }

    fn widen(self) -> f64 {
        f64::from(self)
    }

    fn narrow(x: f64) -> Self {
        x as f32
    }
}

/// Multiplies `x` by `2^exp` without overflowing intermediate powers.
pub(crate) fn scale_by_pow2<T: Scalar>(mut x: T, mut exp: i64) -> T {
    const STEP: i64 = 60;
    let up = T::from_f64(2f64.powi(STEP as i32)).unwrap();
    let down = T::from_f64(2f64.powi(-(STEP as i32))).unwrap();
    while exp > STEP {
        if x.is_infinite() || x.is_zero() {
            return x;
        }
        x = x * up;
        exp -= STEP;
    }
    while exp < -STEP {
        if x.is_zero() {
            return x;
        }
        x = x * down;
        exp += STEP;
    }
    x * T::from_f64(2f64.powi(exp as i32)).unwrap()
}

/// Total order on finite values; panics on NaN, which never passes ingestion.
pub(crate) fn cmp_finite<T: Scalar>(a: &T, b: &T) -> std::cmp::Ordering {
    a.partial_cmp(b).expect("NaN in finite-only context")
}
