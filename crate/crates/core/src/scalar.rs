//! Floating point abstraction shared by every numeric routine.
//!
//! All layers run in either `f32` (training) or `f64` (verification and
//! gradient checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst};
use rustfft::FftNum;

pub use num_complex::Complex;

pub trait Real:
    Float + FloatConst + FftNum + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Unit phasor `e^{i angle}`.
#[inline]
pub fn cis<T: Real>(angle: T) -> Complex<T> {
    Complex::new(angle.cos(), angle.sin())
}
