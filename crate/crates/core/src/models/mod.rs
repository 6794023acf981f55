//! Loss models exposing gradients, stochastic gradients, and Hessian-vector products.

mod dataset;
mod idx;
mod mlp;
mod quadratic;

pub use dataset::{generate_blobs, partition_iid, Dataset};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use mlp::{MlpModel, MseReduction};
pub use quadratic::{log_spaced, QuadraticModel};

use crate::error::Result;
use crate::linalg::vector::{norm, scale};
use crate::linalg::EigenPairs;
use crate::scalar::Scalar;
use crate::stream::StreamKey;

/// What the Local SGD engine and the spectrum probes need from a model.
///
/// `stochastic_gradient` must be an unbiased estimate of `full_gradient`, and
/// `hvp` must be (approximately) linear and symmetric in `v`.
pub trait LossModel<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn loss(&self, theta: &[T]) -> Result<T>;

    fn full_gradient(&self, theta: &[T]) -> Result<Vec<T>>;

    /// Gradient sample for the worker and step named by `key`.
    /// `batch_size` is ignored by models with explicit noise.
    fn stochastic_gradient(&self, theta: &[T], key: &StreamKey, batch_size: usize) -> Result<Vec<T>>;

    fn hvp(&self, theta: &[T], v: &[T]) -> Result<Vec<T>>;

    /// Classification accuracy, for models that have one.
    fn accuracy(&self, _theta: &[T]) -> Result<Option<T>> {
        Ok(None)
    }

    /// Full Hessian spectrum when it is known in closed form.
    fn exact_hessian_eigenpairs(&self) -> Option<EigenPairs<T>> {
        None
    }

    fn initial_params(&self, seed: u64) -> Vec<T>;
}

/// Central difference of exact gradients along `v`:
/// `(∇f(θ + h v̂) − ∇f(θ − h v̂)) · ‖v‖ / (2h)`, with `v̂ = v / ‖v‖`.
pub fn finite_difference_hvp<T: Scalar, M: LossModel<T> + ?Sized>(
    model: &M,
    theta: &[T],
    v: &[T],
    step: T,
) -> Result<Vec<T>> {
    crate::error::check_dim(model.dim(), theta.len())?;
    crate::error::check_dim(model.dim(), v.len())?;
    let vn = norm(v);
    if vn == T::zero() {
        return Ok(vec![T::zero(); v.len()]);
    }
    let plus: Vec<T> = theta.iter().zip(v).map(|(&t, &x)| t + step * x / vn).collect();
    let minus: Vec<T> = theta.iter().zip(v).map(|(&t, &x)| t - step * x / vn).collect();
    let gp = model.full_gradient(&plus)?;
    let gm = model.full_gradient(&minus)?;
    let mut out: Vec<T> = gp.iter().zip(&gm).map(|(&a, &b)| a - b).collect();
    scale(vn / (T::lit(2.0) * step), &mut out);
    Ok(out)
}

/// Default finite-difference step `1e-4 · (1 + ‖θ‖)`.
pub fn default_fd_step<T: Scalar>(theta: &[T]) -> T {
    T::lit(1e-4) * (T::one() + norm(theta))
}

#[cfg(test)]
mod tests;
