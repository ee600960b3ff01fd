//! Scalar abstraction over the floating-point element type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the raster and network math is generic over.
///
/// `f32` is the training dtype; `f64` is used wherever finite-difference
/// oracles need the extra precision.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from `f64` literals and accumulators.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 -> Real conversion")
    }

    /// Widen to `f64` for accumulation and reporting.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real -> f64 conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
