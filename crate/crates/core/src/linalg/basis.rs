//! Orthonormal bases, projectors, and Gram-based orthonormalization of gap buffers.

use crate::error::{check_dim, Error, Result};
use crate::linalg::sym::{sym_eig, EigenPairs, SymMatrix};
use crate::linalg::vector::{axpy, dot, ensure_same_len, norm, scale};
use crate::scalar::Scalar;

/// Columns with pairwise inner products within a small tolerance of the identity.
///
/// A rank-0 basis projects every vector to zero, whatever its length.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalBasis<T> {
    dim: usize,
    columns: Vec<Vec<T>>,
}

impl<T: Scalar> OrthonormalBasis<T> {
    pub fn empty(dim: usize) -> Self {
        Self { dim, columns: Vec::new() }
    }

    /// Wraps columns after checking they are orthonormal to `tolerance()`.
    pub fn from_columns(dim: usize, columns: Vec<Vec<T>>) -> Result<Self> {
        for c in &columns {
            check_dim(dim, c.len())?;
        }
        let basis = Self { dim, columns };
        let err = basis.orthonormality_error();
        if err > Self::tolerance() {
            return Err(Error::invalid(format!(
                "columns are not orthonormal (max |Q^T Q - I| = {err})"
            )));
        }
        Ok(basis)
    }

    /// Leading `k` eigenvectors as a basis.
    pub fn from_eigenpairs(pairs: &EigenPairs<T>, k: usize) -> Result<Self> {
        if k > pairs.len() {
            return Err(Error::invalid(format!(
                "requested {k} eigenvectors, only {} available",
                pairs.len()
            )));
        }
        let dim = pairs.vectors.first().map_or(0, Vec::len);
        Self::from_columns(dim, pairs.vectors[..k].to_vec())
    }

    /// Orthonormality tolerance for the scalar type: 1e-8 for `f64`.
    pub fn tolerance() -> T {
        T::lit(1e-8).max(T::epsilon() * T::lit(100.0))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Vec<T>] {
        &self.columns
    }

    /// `max |Q^T Q - I|`
    pub fn orthonormality_error(&self) -> T {
        let mut worst = T::zero();
        for (i, a) in self.columns.iter().enumerate() {
            for (j, b) in self.columns.iter().enumerate().skip(i) {
                let target = if i == j { T::one() } else { T::zero() };
                worst = worst.max((dot(a, b) - target).abs());
            }
        }
        worst
    }

    fn check(&self, v: &[T]) -> Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        check_dim(self.dim, v.len())
    }

    /// `Q^T v`
    pub fn coefficients(&self, v: &[T]) -> Result<Vec<T>> {
        self.check(v)?;
        Ok(self.columns.iter().map(|q| dot(q, v)).collect())
    }

    /// `Q Q^T v`
    pub fn project(&self, v: &[T]) -> Result<Vec<T>> {
        let coeffs = self.coefficients(v)?;
        let mut out = vec![T::zero(); v.len()];
        for (c, q) in coeffs.iter().zip(&self.columns) {
            axpy(*c, q, &mut out);
        }
        Ok(out)
    }

    /// `(I - Q Q^T) v`
    pub fn project_out(&self, v: &[T]) -> Result<Vec<T>> {
        let p = self.project(v)?;
        Ok(v.iter().zip(&p).map(|(&x, &y)| x - y).collect())
    }
}

/// `QQ^T v`.
pub fn project<T: Scalar>(basis: &OrthonormalBasis<T>, v: &[T]) -> Result<Vec<T>> {
    basis.project(v)
}

/// Gram matrix `G_ij = <z_i, z_j>`.
pub fn gram<T: Scalar>(z: &[Vec<T>]) -> Result<SymMatrix<T>> {
    ensure_same_len(z)?;
    Ok(SymMatrix::from_upper(z.len(), |i, j| dot(&z[i], &z[j])))
}

/// Orthonormal basis for the span of `z` built from the Gram eigendecomposition:
/// `Q = Z V Ω^{-1/2}` over the eigenpairs with `ω ≥ rel_threshold · ω_max`.
///
/// Columns come out ordered by descending Gram eigenvalue. A second
/// Gram-Schmidt pass removes the rounding left by small retained `ω`; it does
/// not change the span.
pub fn orthonormalize_buffer<T: Scalar>(
    z: &[Vec<T>],
    rel_threshold: T,
) -> Result<OrthonormalBasis<T>> {
    if !(rel_threshold > T::zero() && rel_threshold < T::one()) {
        return Err(Error::invalid(format!(
            "rel_threshold must lie in (0, 1), got {rel_threshold}"
        )));
    }
    let dim = z.first().map_or(0, Vec::len);
    let g = gram(z)?;
    if g.n() == 0 {
        return Ok(OrthonormalBasis::empty(dim));
    }
    let eig = sym_eig(&g)?;
    let omega_max = eig.values[0];
    if !(omega_max > T::zero()) {
        return Ok(OrthonormalBasis::empty(dim));
    }
    let cutoff = rel_threshold * omega_max;

    let mut columns: Vec<Vec<T>> = Vec::new();
    for (&omega, v) in eig.values.iter().zip(&eig.vectors) {
        if omega < cutoff {
            break;
        }
        let mut q = vec![T::zero(); dim];
        for (&coef, zj) in v.iter().zip(z) {
            axpy(coef, zj, &mut q);
        }
        scale(T::one() / omega.sqrt(), &mut q);
        for prev in &columns {
            let c = dot(prev, &q);
            axpy(-c, prev, &mut q);
        }
        let n = norm(&q);
        // Numerically dependent on earlier columns despite passing the cutoff.
        if n < T::lit(0.5) {
            continue;
        }
        scale(T::one() / n, &mut q);
        columns.push(q);
    }
    Ok(OrthonormalBasis { dim, columns })
}
