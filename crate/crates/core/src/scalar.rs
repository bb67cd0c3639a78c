use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, NumAssign, NumCast};

/// Floating point scalar used by the model and analytic layers.
///
/// Implemented for `f32` and `f64`.
pub trait Real:
    Float + FloatConst + NumAssign + Debug + Display + Default + Send + Sync + rustfft::FftNum + 'static
{
    /// Lossy conversion from an `f64` literal or constant.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 literal representable")
    }

    #[inline]
    fn count(n: usize) -> Self {
        <Self as NumCast>::from(n).expect("usize representable")
    }

    #[inline]
    fn to_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("finite value")
    }

    #[inline]
    fn two_pi() -> Self {
        Self::TAU()
    }
}

impl Real for f32 {}
impl Real for f64 {}
