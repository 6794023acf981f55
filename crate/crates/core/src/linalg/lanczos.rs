//! Lanczos iteration with full reorthogonalization over a matrix-free operator.

use crate::error::{Error, Result};
use crate::linalg::sym::{sym_eig, EigenPairs, SymMatrix};
use crate::linalg::vector::{axpy, canonicalize_sign, dot, ensure_finite, norm, scale};
use crate::scalar::Scalar;
use crate::stream::{gaussian_vec, rng_for, Purpose};

#[derive(Clone, Copy, Debug)]
pub struct LanczosConfig<T> {
    /// Number of leading (algebraically largest) eigenpairs wanted.
    pub k: usize,
    /// Krylov dimension cap; clamped to the operator dimension.
    pub max_iters: usize,
    pub seed: u64,
    /// Converged when every Ritz residual is below `tol * max(1, |θ_1|)`.
    pub tol: T,
}

impl<T: Scalar> LanczosConfig<T> {
    pub fn new(k: usize, max_iters: usize, seed: u64) -> Self {
        Self { k, max_iters, seed, tol: T::lit(1e-6).max(T::epsilon().sqrt()) }
    }
}

/// Top-`k` eigenpairs of the symmetric operator `op` acting on `dim`-vectors.
///
/// All Krylov vectors are kept and every new vector is orthogonalized against
/// them twice. On an invariant-subspace breakdown the iteration restarts from a
/// fresh random vector orthogonal to the current basis and runs on to
/// `max_iters`. `converged` reports whether the final top-`k` Ritz residuals
/// met the tolerance.
pub fn lanczos_top_k<T, F>(mut op: F, dim: usize, config: &LanczosConfig<T>) -> Result<EigenPairs<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<Vec<T>>,
{
    let k = config.k;
    if k == 0 || k > dim {
        return Err(Error::invalid(format!("lanczos: need 1 <= k <= dim, got k={k}, dim={dim}")));
    }
    if config.max_iters < k {
        return Err(Error::invalid(format!(
            "lanczos: max_iters ({}) must be at least k ({k})",
            config.max_iters
        )));
    }
    let m = config.max_iters.min(dim);
    let mut rng = rng_for(config.seed, Purpose::Lanczos, &[dim as u64]);

    let mut basis: Vec<Vec<T>> = Vec::with_capacity(m);
    let mut alphas: Vec<T> = Vec::with_capacity(m);
    // betas[j] couples basis[j] and basis[j + 1]
    let mut betas: Vec<T> = Vec::with_capacity(m);

    let mut start = gaussian_vec::<T, _>(&mut rng, dim);
    let n0 = norm(&start);
    scale(T::one() / n0, &mut start);
    basis.push(start);

    let mut scale_estimate = T::zero();
    let mut ritz: Option<(EigenPairs<T>, bool)> = None;
    // Residuals cannot reveal eigenvalue multiplicities a restart may still
    // uncover, so a breakdown disables early exit.
    let mut restarted = false;

    for j in 0..m {
        let mut w = op(&basis[j])?;
        if w.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: w.len() });
        }
        ensure_finite(&w, &format!("lanczos operator output at iteration {j}"))?;

        let alpha = dot(&basis[j], &w);
        alphas.push(alpha);
        axpy(-alpha, &basis[j], &mut w);
        if j > 0 {
            axpy(-betas[j - 1], &basis[j - 1], &mut w);
        }
        for _ in 0..2 {
            for v in &basis {
                let c = dot(v, &w);
                axpy(-c, v, &mut w);
            }
        }
        let beta = norm(&w);
        scale_estimate = scale_estimate.max(alpha.abs() + beta);

        let size = j + 1;
        if size >= k {
            let (pairs, done) = ritz_pairs(&alphas, &betas, beta, k, config.tol);
            ritz = Some((pairs, done));
            if done && !restarted {
                break;
            }
        }
        if size == m {
            break;
        }

        let breakdown = beta <= T::epsilon() * T::lit(64.0) * scale_estimate.max(T::min_positive_value());
        if breakdown {
            restarted = true;
            betas.push(T::zero());
            let mut fresh = gaussian_vec::<T, _>(&mut rng, dim);
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &fresh);
                    axpy(-c, v, &mut fresh);
                }
            }
            let nf = norm(&fresh);
            scale(T::one() / nf, &mut fresh);
            basis.push(fresh);
        } else {
            betas.push(beta);
            scale(T::one() / beta, &mut w);
            basis.push(w);
        }
    }

    let (pairs, converged) = ritz.expect("at least k iterations ran");
    let vectors = pairs
        .vectors
        .iter()
        .map(|y| {
            let mut x = vec![T::zero(); dim];
            for (&c, v) in y.iter().zip(&basis) {
                axpy(c, v, &mut x);
            }
            let nx = norm(&x);
            scale(T::one() / nx, &mut x);
            canonicalize_sign(&mut x);
            x
        })
        .collect();
    Ok(EigenPairs { values: pairs.values, vectors, converged })
}

/// Top-`k` Ritz pairs of the tridiagonal projection plus the residual test
/// `|β_last · y_last| ≤ tol · max(1, |θ_1|)`.
fn ritz_pairs<T: Scalar>(
    alphas: &[T],
    betas: &[T],
    beta_last: T,
    k: usize,
    tol: T,
) -> (EigenPairs<T>, bool) {
    let n = alphas.len();
    let t = SymMatrix::from_upper(n, |i, j| {
        if i == j {
            alphas[i]
        } else if j == i + 1 {
            betas[i]
        } else {
            T::zero()
        }
    });
    let eig = sym_eig(&t).expect("finite tridiagonal").truncate(k);
    let bound = tol * T::one().max(eig.values[0].abs());
    let done = eig.vectors.iter().all(|y| (beta_last * y[n - 1]).abs() <= bound);
    (eig, done)
}
