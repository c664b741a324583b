//! Scalar element abstraction so the tensor engine runs in f32 (training,
//! inference) or f64 (metric oracles, finite-difference gradient checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element usable throughout the tensor engine.
pub trait Elem:
    ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
    const BYTES: usize;
    fn from_f64_(x: f64) -> Self;
    fn to_f64_(self) -> f64;
    fn from_le(bytes: &[u8]) -> Self;
    fn to_le(self, out: &mut Vec<u8>);
}

impl Elem for f32 {
    const BYTES: usize = 4;
    #[inline]
    fn from_f64_(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64_(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
    #[inline]
    fn to_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Elem for f64 {
    const BYTES: usize = 8;
    #[inline]
    fn from_f64_(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64_(self) -> f64 {
        self
    }
    #[inline]
    fn from_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    #[inline]
    fn to_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

/// Shorthand for lifting an f64 literal into the element type.
#[inline]
pub fn c<F: Elem>(x: f64) -> F {
    F::from_f64_(x)
}
