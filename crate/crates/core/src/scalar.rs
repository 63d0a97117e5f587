//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating point scalar the whole crate is generic over (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssignOps + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(x: usize) -> Self {
        Self::from_usize(x).expect("integer representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn sq(self) -> Self {
        self * self
    }
}

impl<T> Real for T where
    T: Float + FloatConst + FromPrimitive + ToPrimitive + NumAssignOps + Debug + Display + Send + Sync + 'static
{
}

/// `sin(s)/s`, continuous at zero.
pub fn sinc<T: Real>(s: T) -> T {
    if s.abs() < T::lit(1e-4) {
        let s2 = s * s;
        T::one() - s2 / T::lit(6.0) + s2 * s2 / T::lit(120.0)
    } else {
        s.sin() / s
    }
}

/// `sinh(s)/s`, continuous at zero.
pub fn sinhc<T: Real>(s: T) -> T {
    if s.abs() < T::lit(1e-4) {
        let s2 = s * s;
        T::one() + s2 / T::lit(6.0) + s2 * s2 / T::lit(120.0)
    } else {
        s.sinh() / s
    }
}
