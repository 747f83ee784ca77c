//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt;

use nalgebra as na;
use num_traits as nt;

/// Floating point type usable by the geometry, dynamics and solver code.
///
/// Implemented for `f32` and `f64`. Tolerances throughout the crate are
/// stated for `f64`; single precision works but only at single-precision
/// accuracy.
pub trait Real:
    Copy
    + na::RealField
    + nt::FloatConst
    + nt::FromPrimitive
    + nt::ToPrimitive
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Machine epsilon of the representation.
    const EPSILON: Self;
}

impl Real for f32 {
    const EPSILON: Self = f32::EPSILON;
}

impl Real for f64 {
    const EPSILON: Self = f64::EPSILON;
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Lossy conversion to `f64`, used for reporting and error payloads.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Converts a count into `T`.
#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}
