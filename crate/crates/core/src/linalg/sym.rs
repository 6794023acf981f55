//! Dense symmetric matrices and the cyclic Jacobi eigensolver.

use crate::error::{Error, Result};
use crate::linalg::vector::{canonicalize_sign, dot, norm};
use crate::scalar::Scalar;

const MAX_SWEEPS: usize = 100;

/// Square symmetric matrix stored row-major; every write is mirrored.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    /// Builds the matrix from `f(i, j)` evaluated on the upper triangle only.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Reads the upper triangle of a row-major `n x n` buffer.
    pub fn from_row_major(n: usize, data: &[T]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self::from_upper(n, |i, j| data[i * n + j]))
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[i * self.n + j] = value;
        self.data[j * self.n + i] = value;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_row_major(&self) -> &[T] {
        &self.data
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.n, "matvec dimension");
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn frobenius_norm(&self) -> T {
        norm(&self.data)
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `u^T A v`
    pub fn bilinear(&self, u: &[T], v: &[T]) -> T {
        dot(u, &self.matvec(v))
    }
}

/// Eigenvalues in descending order with matching unit eigenvectors.
#[derive(Clone, Debug)]
pub struct EigenPairs<T> {
    pub values: Vec<T>,
    pub vectors: Vec<Vec<T>>,
    /// False when an iterative solver ran out of iterations before meeting its
    /// residual tolerance; values are then best-effort estimates.
    pub converged: bool,
}

impl<T: Scalar> EigenPairs<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Keeps the leading `k` pairs.
    pub fn truncate(mut self, k: usize) -> Self {
        self.values.truncate(k);
        self.vectors.truncate(k);
        self
    }

    /// `V diag(values) V^T`
    pub fn reconstruct(&self) -> SymMatrix<T> {
        let n = self.vectors.first().map_or(0, Vec::len);
        SymMatrix::from_upper(n, |i, j| {
            self.values
                .iter()
                .zip(&self.vectors)
                .fold(T::zero(), |acc, (&l, v)| acc + l * v[i] * v[j])
        })
    }
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eig<T: Scalar>(a: &SymMatrix<T>) -> Result<EigenPairs<T>> {
    let n = a.n();
    if !a.as_row_major().iter().all(|x| x.is_finite()) {
        return Err(Error::non_finite("sym_eig input matrix"));
    }
    let mut m = a.as_row_major().to_vec();
    // v[r * n + c]: column c holds the c-th eigenvector
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }

    let scale = a.frobenius_norm();
    let eps = T::epsilon();
    let two = T::lit(2.0);
    let mut converged = n <= 1 || scale == T::zero();

    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let off: T = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m[p * n + q] * m[p * n + q])
            .sum();
        if off.sqrt() <= eps * scale * T::lit(0.01) {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                // Entry already negligible relative to both diagonals.
                if apq.abs() < eps * T::lit(1e-3) * (app.abs() + aqq.abs()) {
                    m[p * n + q] = T::zero();
                    m[q * n + p] = T::zero();
                    continue;
                }
                let theta = (aqq - app) / (two * apq);
                let t = if theta.is_infinite() {
                    T::zero()
                } else {
                    let sgn = if theta >= T::zero() { T::one() } else { -T::one() };
                    sgn / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;

                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = T::zero();
                m[q * n + p] = T::zero();
                for r in 0..n {
                    if r != p && r != q {
                        let arp = m[r * n + p];
                        let arq = m[r * n + q];
                        let new_rp = c * arp - s * arq;
                        let new_rq = s * arp + c * arq;
                        m[r * n + p] = new_rp;
                        m[p * n + r] = new_rp;
                        m[r * n + q] = new_rq;
                        m[q * n + r] = new_rq;
                    }
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&c| {
            let mut col: Vec<T> = (0..n).map(|r| v[r * n + c]).collect();
            canonicalize_sign(&mut col);
            col
        })
        .collect();
    Ok(EigenPairs { values, vectors, converged })
}
