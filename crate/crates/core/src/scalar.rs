use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point element type of embeddings and all derived similarity math.
///
/// Implemented for `f32` and `f64`. The crate-level aliases use `f64`, which
/// is what the file readers widen the on-disk `f32` payloads into.
pub trait Scalar:
    Float + FromPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossless for `f64`, narrowing for `f32`.
    fn widen_f32(v: f32) -> Self;

    fn narrow_f32(self) -> f32;

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).unwrap_or_else(Self::infinity)
    }
}

impl Scalar for f32 {
    #[inline]
    fn widen_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn narrow_f32(self) -> f32 {
        self
    }
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen_f32(v: f32) -> Self {
        f64::from(v)
    }
    #[inline]
    fn narrow_f32(self) -> f32 {
        self as f32
    }
    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + *x * *y;
    }
    acc
}

/// Squared distance summed in four interleaved lanes. Faster than
/// [`squared_distance`] but rounds differently, so the two must not be
/// mixed within one computation.
#[inline]
pub(crate) fn squared_distance_lanes<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let split = n - n % 4;
    for (x, y) in a[..split].chunks_exact(4).zip(b[..split].chunks_exact(4)) {
        let x: &[T; 4] = x.try_into().expect("chunk of 4");
        let y: &[T; 4] = y.try_into().expect("chunk of 4");
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] = acc[l] + d * d;
        }
    }
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        let d = *x - *y;
        acc[0] = acc[0] + d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

#[inline]
pub(crate) fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc = acc + d * d;
    }
    acc
}
