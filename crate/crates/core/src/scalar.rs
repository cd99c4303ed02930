//! Scalar abstraction shared by every module.

use nalgebra::RealField;

/// Floating point scalar usable throughout the library (`f32` or `f64`).
pub trait Real: RealField + Copy + Default + Send + Sync + 'static {}

impl<T> Real for T where T: RealField + Copy + Default + Send + Sync + 'static {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts `T` back to `f64`.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_subset().unwrap_or(f64::NAN)
}
