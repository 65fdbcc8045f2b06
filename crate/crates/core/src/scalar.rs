//! Scalar abstraction over the floating-point element type.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the numeric core is generic over.
///
/// Implemented for `f32` and `f64`. Study execution, persistence, and the
/// CLI pin `f64` through the crate-root aliases; the math modules stay
/// generic so the kernels can be instantiated at either width.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Error function, used to normalize truncated Gaussian kernels.
    fn erf(self) -> Self;

    /// Converts an `f64` constant into the scalar type.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("constant not representable in scalar type")
    }

    /// Converts a count into the scalar type.
    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("count not representable in scalar type")
    }

    /// View as `f64`, the wire and persistence format for numeric values.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
}
