//! Scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar the numeric core is generic over.
///
/// `f64` is the working precision of the shipped pipeline; `f32` exists for
/// memory-bound experiments and is not used by the gradient-check suites.
pub trait Scalar:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Display
    + Debug
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar fits in f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lifting an `f64` literal into a generic scalar.
pub fn s<F: Scalar>(x: f64) -> F {
    <F as Scalar>::from_f64(x)
}
