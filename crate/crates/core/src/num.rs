//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating point scalar the simulation and operator code is generic over.
///
/// Implemented for `f32` and `f64`. Everything that ends up in a dataset is
/// computed in the chosen precision; sequence timing stays in `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + FftNum + Default + Debug + Display + Send + Sync + 'static
{
    /// Name used for this scalar in container headers.
    const REAL_DTYPE: &'static str;
    /// Name used for `Complex<Self>` in container headers.
    const COMPLEX_DTYPE: &'static str;

    /// Lossless-as-possible conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 representable in target float")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f32 {
    const REAL_DTYPE: &'static str = "float32";
    const COMPLEX_DTYPE: &'static str = "complex64";
}

impl Real for f64 {
    const REAL_DTYPE: &'static str = "float64";
    const COMPLEX_DTYPE: &'static str = "complex128";
}

/// Converts an index-like count to the scalar type.
#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("usize representable in float")
}
