//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::Serialize;

/// Real floating-point scalar: `f32` or `f64`.
///
/// Everything numeric in the crate is written against this trait. Tolerances
/// are specified as `f64` literals and converted with [`Scalar::lit`], so they
/// only carry their intended meaning in double precision.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + LowerExp + Debug + Serialize + Send + Sync + 'static
{
    /// Machine epsilon of the type.
    fn machine_epsilon() -> Self;

    /// Converts an `f64` constant into the scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn finite(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl Scalar for f32 {
    fn machine_epsilon() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn machine_epsilon() -> Self {
        f64::EPSILON
    }
}
