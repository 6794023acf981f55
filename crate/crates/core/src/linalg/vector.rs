//! Slice kernels for flat parameter-space vectors.

use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn scale<T: Scalar>(alpha: T, x: &mut [T]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn max_abs<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

pub fn all_finite<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|x| x.is_finite())
}

pub(crate) fn ensure_finite<T: Scalar>(a: &[T], context: &str) -> Result<()> {
    if all_finite(a) {
        Ok(())
    } else {
        Err(Error::non_finite(context))
    }
}

pub(crate) fn ensure_same_len<T>(vectors: &[Vec<T>]) -> Result<()> {
    if let Some(first) = vectors.first() {
        for v in &vectors[1..] {
            check_dim(first.len(), v.len())?;
        }
    }
    Ok(())
}

/// Flips `v` so that its largest-magnitude entry is positive (first index wins ties).
pub fn canonicalize_sign<T: Scalar>(v: &mut [T]) {
    let mut best = 0;
    let mut best_abs = T::zero();
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if best_abs > T::zero() && v[best] < T::zero() {
        scale(-T::one(), v);
    }
}

/// Mean of equal-length vectors, shifted by the first one so identical inputs
/// average to exactly that input.
pub fn shifted_mean<T: Scalar>(vectors: &[Vec<T>]) -> Vec<T> {
    let first = &vectors[0];
    let inv = T::one() / T::from_usize_lossy(vectors.len());
    let mut acc = vec![T::zero(); first.len()];
    for v in &vectors[1..] {
        for ((a, &x), &r) in acc.iter_mut().zip(v).zip(first) {
            *a += x - r;
        }
    }
    first.iter().zip(&acc).map(|(&r, &a)| r + a * inv).collect()
}
