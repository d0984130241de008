//! Scalar abstraction shared by the numerics, losses, model and optimizer.
//!
//! Everything that does arithmetic on scores or parameters is written against [`Real`],
//! so the same code runs in `f64` (the default, and the only precision in which the
//! exact-enumeration identities are checked) and in `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts from `f64`; lossy for narrower types.
    fn of(v: f64) -> Self;

    /// Widens to `f64` (exact for `f32` and `f64`).
    fn to_f64_lossless(self) -> f64;

    /// Converts a count or index.
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        f64::from(self)
    }
}

/// `sign(v)` with `sign(0) = 0`, as used by the absolute-value correction.
#[inline]
pub fn sign0<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
