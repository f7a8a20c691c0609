//! Floating-point scalar abstraction shared by every trainer.
//!
//! Training runs in `f32`; the `f64` instantiation exists so analytic
//! gradients can be checked against finite differences.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// f32 or f64
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; never fails for finite input.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar always converts to f64")
    }

    /// Raw little-endian `f32` bits, the on-disk representation.
    fn to_le_f32_bytes(self) -> [u8; 4] {
        (self.as_f64() as f32).to_le_bytes()
    }

    fn from_le_f32_bytes(bytes: [u8; 4]) -> Self {
        Self::of(f32::from_le_bytes(bytes) as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic function clamped to the open interval (0, 1).
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    let eps = T::epsilon();
    s.max(eps).min(T::one() - eps)
}

/// `ln(1 + exp(x))`, finite for every finite `x`.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let pairs = [
        lanes[0] + lanes[4],
        lanes[1] + lanes[5],
        lanes[2] + lanes[6],
        lanes[3] + lanes[7],
    ];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

/// `y += alpha * x`
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    dot(a, b) / (na * nb)
}

pub fn squared_euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, d| acc + d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_stays_open() {
        for x in [-1e4f64, -50.0, 0.0, 50.0, 1e4] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0, "{x} -> {s}");
        }
        for x in [-1e4f32, 0.0, 1e4] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0);
        }
        assert!((sigmoid(1.0f64) - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn softplus_matches_log1p_exp() {
        for x in [-30.0f64, -1.0, 0.0, 1.0, 30.0] {
            assert!((softplus(x) - x.exp().ln_1p()).abs() < 1e-12);
        }
        assert!(softplus(1e5f64).is_finite());
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0f64, 0.0], &[1.0, 2.0]), 0.0);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 3.0]), 0.0);
    }

    #[test]
    fn f32_bytes_round_trip() {
        let x = 0.1f32;
        assert_eq!(f32::from_le_f32_bytes(x.to_le_f32_bytes()), x);
    }
}
