//! Scalar abstraction shared by the physics and rendering math.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the simulation and rasterizer are generic over.
///
/// Implemented for `f32` and `f64`. Every operation the engine performs on a
/// `Real` is an IEEE-754 basic operation or a libm call, so a fixed scalar type
/// gives bit-identical results across runs and thread counts.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to any Real")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
