//! Scalar abstraction for the reward and policy-objective math.
//!
//! Reward values and GRPO quantities are computed over any `Scalar`
//! (`f32` or `f64`). Pixel geometry stays in integer/`f64` space and is
//! converted at the boundary.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the reward engine and the GRPO math.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into `F`.
///
/// Every `Scalar` can represent every finite `f64` up to rounding, so this
/// never fails for the constants used in this crate.
#[inline]
pub fn lit<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("finite f64 literal representable in scalar")
}
