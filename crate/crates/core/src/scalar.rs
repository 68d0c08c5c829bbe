//! Floating-point scalar abstraction shared by the distribution math and the
//! decoders.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Probability / log-probability scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`, used for constants.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Natural log of two, the upper bound of the Jensen-Shannon divergence.
    #[inline]
    fn ln_2() -> Self {
        Self::of(std::f64::consts::LN_2)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
