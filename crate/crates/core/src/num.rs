//! Scalar abstraction for the numerical core.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the estimation and asymptotics code is generic over.
///
/// Implemented by `f32` and `f64` through the blanket impl; the pipeline
/// defaults to `f64` via the crate-root aliases.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_usize_(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable in scalar")
    }

    fn from_f64_(v: f64) -> Self {
        Self::from_f64(v).expect("f64 representable in scalar")
    }

    fn two() -> Self {
        Self::one() + Self::one()
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Falling factorial `(alpha)_p = alpha (alpha-1) ... (alpha-p+1)`, with
/// `(alpha)_0 = 1`. Defined for real `alpha`.
pub fn falling_factorial<F: Real>(alpha: F, p: usize) -> F {
    let mut out = F::one();
    for i in 0..p {
        out *= alpha - F::from_usize_(i);
    }
    out
}
