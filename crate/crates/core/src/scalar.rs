//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// PLY property type name used when serializing this scalar.
    const PLY_TYPE: &'static str;

    /// Converts an `f64` literal. Never fails for `f32`/`f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::lit(v as f64)
    }

    /// Appends the little-endian bytes of `self`.
    fn write_le(self, out: &mut Vec<u8>);

    /// Stable bit pattern used for fingerprinting.
    fn bits(self) -> u64;
}

impl Real for f32 {
    const PLY_TYPE: &'static str = "float";

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Real for f64 {
    const PLY_TYPE: &'static str = "double";

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn bits(self) -> u64 {
        self.to_bits()
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Inverse of [`sigmoid`], with `p` clamped away from 0 and 1.
#[inline]
pub fn logit<T: Real>(p: T) -> T {
    let eps = T::lit(1e-7);
    let p = p.max(eps).min(T::one() - eps);
    (p / (T::one() - p)).ln()
}
