use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type for all tensors and model math: f32 or f64.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough round trip used for serialization (checkpoints store f64).
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("scalar converts from f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
