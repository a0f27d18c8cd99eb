//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar accepted by the estimators: `f32` or `f64`.
///
/// Linear algebra goes through [`RealField`]; conversions to and from the
/// `f64` literals used for defaults and randomness go through `num-traits`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` constant, saturating to the nearest representable value.
    fn cst(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 constant is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::cst(n as f64)
    }

    /// Machine epsilon.
    fn eps() -> Self {
        <Self as approx::AbsDiffEq>::default_epsilon()
    }

    /// Absolute tolerance that is `base` in double precision and widens for
    /// narrower types so that it stays above rounding noise.
    fn tol(base: f64) -> Self {
        let floor = Self::eps().sqrt().to_f64_lossy();
        if Self::eps().to_f64_lossy() > 1e-10 {
            Self::cst(base.max(floor))
        } else {
            Self::cst(base)
        }
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
