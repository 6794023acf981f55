//! Closed-form gap covariance and the Monte-Carlo harness that checks it.
//!
//! For a quadratic with Hessian `H = U diag(λ) Uᵀ` and noise covariance
//! `Σ = U diag(σ²) Uᵀ`, a worker-average gap after `τ` local steps has
//! covariance `η²(1 − 1/M) Σ_q (I − ηH)^q Σ (I − ηH)^q`, whose eigenbasis
//! diagonal is `η²(1 − 1/M) σ_r² ψ_τ(ηλ_r)`.

use rayon::prelude::*;

use crate::engine::{run_round, LocalSgdConfig};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{EigenPairs, SymMatrix};
use crate::models::{LossModel, QuadraticModel};
use crate::scalar::Scalar;

/// Rounds simulated per parallel batch in the Monte-Carlo harness.
const MC_CHUNK: usize = 1024;

/// `ψ_τ(a) = Σ_{q<τ} (1 − a)^{2q}`.
///
/// Uses the geometric closed form only when its denominator is safely away
/// from zero; otherwise sums the terms.
pub fn psi<T: Scalar>(tau: usize, a: T) -> T {
    let r = (T::one() - a) * (T::one() - a);
    let denom = T::one() - r;
    if denom.abs() > T::lit(1e-12) {
        (T::one() - r.powi(tau as i32)) / denom
    } else {
        let mut term = T::one();
        let mut acc = T::zero();
        for _ in 0..tau {
            acc += term;
            term *= r;
        }
        acc
    }
}

/// `1 − 1/M`, the variance share left after subtracting the worker mean.
pub fn worker_prefactor<T: Scalar>(workers: usize) -> T {
    T::one() - T::one() / T::from_usize_lossy(workers)
}

/// Gap covariance in parameter coordinates plus its eigenbasis diagonal.
#[derive(Clone, Debug)]
pub struct CovariancePrediction<T> {
    pub matrix: SymMatrix<T>,
    /// `u_rᵀ · matrix · u_r` for each eigendirection, in the order of the
    /// eigenpairs that produced it.
    pub variances: Vec<T>,
    /// Set when `η λ_1 ≥ 2`: local steps diverge, so the prediction describes
    /// an unstable process.
    pub divergent: bool,
}

/// Predicted gap covariance for Hessian eigenpairs `h` and per-direction noise
/// variances `sigma_sq`.
pub fn predicted_gap_covariance<T: Scalar>(
    h: &EigenPairs<T>,
    sigma_sq: &[T],
    eta: T,
    tau: usize,
    workers: usize,
) -> Result<CovariancePrediction<T>> {
    check_dim(h.len(), sigma_sq.len())?;
    if tau == 0 || workers == 0 {
        return Err(Error::invalid("tau and workers must be >= 1"));
    }
    let pre = eta * eta * worker_prefactor::<T>(workers);
    let variances: Vec<T> = h
        .values
        .iter()
        .zip(sigma_sq)
        .map(|(&l, &s)| pre * s * psi(tau, eta * l))
        .collect();
    let divergent = h.values.iter().any(|&l| eta * l >= T::lit(2.0));
    let matrix = EigenPairs { values: variances.clone(), vectors: h.vectors.clone(), converged: true }.reconstruct();
    Ok(CovariancePrediction { matrix, variances, divergent })
}

/// Theory prediction for a quadratic model under `cfg`.
pub fn predict_for_model<T: Scalar>(model: &QuadraticModel<T>, cfg: &LocalSgdConfig<T>) -> Result<CovariancePrediction<T>> {
    let h = EigenPairs {
        values: model.eigenvalues().to_vec(),
        vectors: model.eigenbasis().to_vec(),
        converged: true,
    };
    predicted_gap_covariance(&h, &model.noise_variances(), cfg.eta, cfg.tau, cfg.workers)
}

/// `Uᵀ A U` restricted to the given directions.
pub fn in_basis<T: Scalar>(a: &SymMatrix<T>, basis: &[Vec<T>]) -> SymMatrix<T> {
    let au: Vec<Vec<T>> = basis.iter().map(|u| a.matvec(u)).collect();
    SymMatrix::from_upper(basis.len(), |r, s| crate::linalg::vector::dot(&basis[r], &au[s]))
}

/// Empirical covariance of worker 0's gap over `n_rounds` rounds that all
/// restart from `center`.
///
/// Round `r` uses the engine's streams for round index `r`, so the estimate is
/// reproducible and independent of thread scheduling. Accumulation runs in
/// round order.
pub fn monte_carlo_gap_covariance<T: Scalar>(
    model: &QuadraticModel<T>,
    cfg: &LocalSgdConfig<T>,
    n_rounds: usize,
    center: &[T],
) -> Result<CovariancePrediction<T>> {
    cfg.validate()?;
    check_dim(model.dim(), center.len())?;
    if n_rounds < 2 {
        return Err(Error::invalid("monte carlo needs at least 2 rounds"));
    }
    let d = model.dim();
    let sequential = LocalSgdConfig { parallel: false, ..cfg.clone() };
    let mut mean = vec![T::zero(); d];
    let mut scatter = vec![T::zero(); d * d];
    let mut seen = 0usize;
    for start in (0..n_rounds).step_by(MC_CHUNK) {
        let end = (start + MC_CHUNK).min(n_rounds);
        let gaps: Vec<Vec<T>> = (start..end)
            .into_par_iter()
            .map(|r| run_round(model, center, &sequential, r).map(|res| res.gaps.into_iter().next().unwrap()))
            .collect::<Result<_>>()?;
        for g in gaps {
            // Welford update of mean and scatter matrix.
            seen += 1;
            let n = T::from_usize_lossy(seen);
            let before: Vec<T> = g.iter().zip(&mean).map(|(&x, &m)| x - m).collect();
            for (m, &b) in mean.iter_mut().zip(&before) {
                *m += b / n;
            }
            for i in 0..d {
                let after_i = g[i] - mean[i];
                if after_i == T::zero() {
                    continue;
                }
                for j in i..d {
                    scatter[i * d + j] += after_i * before[j];
                }
            }
        }
    }
    let denom = T::from_usize_lossy(n_rounds - 1);
    let matrix = SymMatrix::from_upper(d, |i, j| scatter[i * d + j] / denom);
    let variances = model.eigenbasis().iter().map(|u| matrix.bilinear(u, u)).collect();
    let divergent = model.eigenvalues().iter().any(|&l| cfg.eta * l >= T::lit(2.0));
    Ok(CovariancePrediction { matrix, variances, divergent })
}

/// Least-squares estimate of `γ` in `var_r ∝ λ_r^γ ψ_τ(ηλ_r)`.
///
/// Directions with non-positive or non-finite `λ_r` or variance are skipped.
pub fn fit_noise_exponent<T: Scalar>(
    lambdas: &[T],
    empirical_vars: &[T],
    eta: T,
    tau: usize,
    workers: usize,
) -> Result<T> {
    check_dim(lambdas.len(), empirical_vars.len())?;
    let pre = eta * eta * worker_prefactor::<T>(workers);
    let points: Vec<(T, T)> = lambdas
        .iter()
        .zip(empirical_vars)
        .filter(|(&l, &v)| l > T::zero() && v > T::zero() && l.is_finite() && v.is_finite())
        .map(|(&l, &v)| (l.ln(), (v / (pre * psi(tau, eta * l))).ln()))
        .collect();
    if points.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 directions with positive eigenvalue and variance, got {}",
            points.len()
        )));
    }
    let n = T::from_usize_lossy(points.len());
    let mx = points.iter().map(|p| p.0).sum::<T>() / n;
    let my = points.iter().map(|p| p.1).sum::<T>() / n;
    let sxx: T = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: T = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= T::zero() {
        return Err(Error::Undefined("all eigenvalues are equal; slope is undefined"));
    }
    Ok(sxy / sxx)
}
