//! FIFO buffer of worker-average gaps, the proxy subspace built from it, and
//! the alignment (`chi`) and dominant-removal (`rho`) metrics.

use std::collections::VecDeque;

use crate::error::{check_dim, Error, Result};
use crate::linalg::vector::{norm, sub};
use crate::linalg::{orthonormalize_buffer, OrthonormalBasis};
use crate::scalar::Scalar;

pub const DEFAULT_REL_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct GapBuffer<T> {
    capacity: usize,
    rel_threshold: T,
    entries: VecDeque<Vec<T>>,
}

impl<T: Scalar> GapBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self::with_threshold(capacity, T::lit(DEFAULT_REL_THRESHOLD))
    }

    pub fn with_threshold(capacity: usize, rel_threshold: T) -> Self {
        Self { capacity, rel_threshold, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rel_threshold(&self) -> T {
        self.rel_threshold
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &Vec<T>> {
        self.entries.iter()
    }

    /// Inserts the gaps of workers `0..M-1`; the last worker's gap is the
    /// negated sum of the others and is dropped. Oldest entries are evicted
    /// once the buffer is over capacity.
    pub fn push_round_gaps(&mut self, gaps: &[Vec<T>]) -> Result<()> {
        let dim = self.entries.front().map(Vec::len).or_else(|| gaps.first().map(Vec::len));
        if let Some(dim) = dim {
            for g in gaps {
                check_dim(dim, g.len())?;
            }
        }
        let keep = gaps.len().saturating_sub(1);
        for g in &gaps[..keep] {
            self.entries.push_back(g.clone());
        }
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Orthonormal basis `Q_c` of the buffer span (see [`orthonormalize_buffer`]).
    pub fn build_basis(&self) -> Result<OrthonormalBasis<T>> {
        let z: Vec<Vec<T>> = self.entries.iter().cloned().collect();
        orthonormalize_buffer(&z, self.rel_threshold)
    }
}

/// `‖P_C v‖ / ‖v‖`: the share of `v`'s norm inside the dominant subspace.
pub fn chi<T: Scalar>(dominant: &OrthonormalBasis<T>, v: &[T]) -> Result<T> {
    let vn = norm(v);
    if vn == T::zero() {
        return Err(Error::Undefined("chi of the zero vector"));
    }
    let p = dominant.project(v)?;
    Ok((norm(&p) / vn).min(T::one()))
}

/// `1 − ‖P_C (I − P_Q) v‖ / ‖P_C v‖`: the fraction of `v`'s true dominant
/// component removed by filtering out the proxy span `Q`.
///
/// Not clamped: values below zero flag a proxy that inflates the dominant
/// component instead of removing it.
pub fn rho<T: Scalar>(dominant: &OrthonormalBasis<T>, proxy: &OrthonormalBasis<T>, v: &[T]) -> Result<T> {
    let pv = dominant.project(v)?;
    let denom = norm(&pv);
    if denom == T::zero() {
        return Err(Error::Undefined("rho with no dominant component"));
    }
    let filtered = proxy.project_out(v)?;
    let num = norm(&dominant.project(&filtered)?);
    Ok(T::one() - num / denom)
}

/// Metrics for one probe of one buffer.
#[derive(Clone, Debug)]
pub struct SubspaceReport<T> {
    pub chi: Option<T>,
    pub rho: Option<T>,
    pub retained_rank: usize,
    pub basis: OrthonormalBasis<T>,
}

impl<T: Scalar> SubspaceReport<T> {
    /// Builds `Q_c` from `buffer` and evaluates both metrics on `v`; an
    /// undefined metric is `None`, never zero.
    pub fn evaluate(buffer: &GapBuffer<T>, dominant: &OrthonormalBasis<T>, v: &[T]) -> Result<Self> {
        let basis = buffer.build_basis()?;
        let chi = optional(chi(dominant, v))?;
        let rho = optional(rho(dominant, &basis, v))?;
        Ok(Self { chi, rho, retained_rank: basis.rank(), basis })
    }

    /// `‖(I − P_C) v‖ / ‖v‖`, the complement of `chi`.
    pub fn bulk_fraction(dominant: &OrthonormalBasis<T>, v: &[T]) -> Result<T> {
        let p = dominant.project(v)?;
        Ok(norm(&sub(v, &p)) / norm(v))
    }
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(x) => Ok(Some(x)),
        Err(Error::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}
