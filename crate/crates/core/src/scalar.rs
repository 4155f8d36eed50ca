//! Scalar abstraction for all numeric model code.
//!
//! Everything that touches observations, network parameters, or token
//! distributions is generic over [`Scalar`] so the same code runs in f32
//! and f64. Concrete aliases live at the crate root.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the planner.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from f64. Panics only on NaN-free exotic types,
    /// which the trait bounds exclude.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    /// Lossy conversion to f64 for reporting and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Shorthand used all over the numeric code.
#[inline]
pub fn s<T: Scalar>(x: f64) -> T {
    T::from_f64_lossy(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_f32_f64() {
        let x: f32 = s::<f32>(0.1f32 as f64);
        assert_eq!(x, 0.1f32);
        let y: f64 = s::<f64>(0.1);
        assert_eq!(y, 0.1);
    }
}
