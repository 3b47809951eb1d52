//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All node algebra is written against [`Real`] so the engine can run in
//! `f64` (the default, used for every tolerance in the test suites) or `f32`.
//! Special functions are evaluated in `f64` and rounded back.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::special;

/// Floating point scalar usable by the engine: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Never fails for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }

    /// Smallest posterior variance the engine keeps.
    #[inline]
    fn variance_floor() -> Self {
        Self::lit(1e-300).max(Self::min_positive_value())
    }

    fn erfc(self) -> Self {
        Self::lit(special::erfc(self.as_f64()))
    }

    /// Standard normal cdf.
    fn norm_cdf(self) -> Self {
        Self::lit(special::norm_cdf(self.as_f64()))
    }

    /// Standard normal pdf.
    fn norm_pdf(self) -> Self {
        Self::lit(special::norm_pdf(self.as_f64()))
    }

    fn ln_norm_cdf(self) -> Self {
        Self::lit(special::ln_norm_cdf(self.as_f64()))
    }

    fn ln_gamma(self) -> Self {
        Self::lit(special::ln_gamma(self.as_f64()))
    }

    fn digamma(self) -> Self {
        Self::lit(special::digamma(self.as_f64()))
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `ln(2π)`.
#[inline]
pub fn ln_2pi<T: Real>() -> T {
    (T::two() * T::PI()).ln()
}
