use crate::error::{check_dim, Error, Result};
use crate::linalg::vector::{axpy, dot, norm, scale};
use crate::linalg::{EigenPairs, SymMatrix};
use crate::models::LossModel;
use crate::scalar::Scalar;
use crate::stream::{gaussian_vec, rng_for, standard_normal, Purpose, StreamKey};

/// `f(θ) = ½ (θ − θ*)ᵀ H (θ − θ*)` with `H = U Λ Uᵀ`, plus Gaussian gradient
/// noise that is diagonal in `U` with variances `κ λ_r^γ`.
#[derive(Clone, Debug)]
pub struct QuadraticModel<T> {
    eigenvalues: Vec<T>,
    basis: Vec<Vec<T>>,
    hessian: SymMatrix<T>,
    minimizer: Vec<T>,
    noise_scale: T,
    noise_exponent: T,
    noise_std: Vec<T>,
}

impl<T: Scalar> QuadraticModel<T> {
    /// Random orthonormal eigenbasis and minimizer drawn from `seed`.
    pub fn new(eigenvalues: Vec<T>, noise_scale: T, noise_exponent: T, seed: u64) -> Result<Self> {
        let d = eigenvalues.len();
        let basis = random_orthonormal(d, seed);
        let mut rng = rng_for(seed, Purpose::Init, &[1]);
        let minimizer = gaussian_vec(&mut rng, d);
        Self::with_basis(eigenvalues, basis, minimizer, noise_scale, noise_exponent)
    }

    pub fn with_basis(
        eigenvalues: Vec<T>,
        basis: Vec<Vec<T>>,
        minimizer: Vec<T>,
        noise_scale: T,
        noise_exponent: T,
    ) -> Result<Self> {
        let d = eigenvalues.len();
        if d == 0 {
            return Err(Error::invalid("quadratic model needs at least one eigenvalue"));
        }
        check_dim(d, basis.len())?;
        check_dim(d, minimizer.len())?;
        for u in &basis {
            check_dim(d, u.len())?;
        }
        if eigenvalues.iter().any(|&l| !(l >= T::zero()) || !l.is_finite()) {
            return Err(Error::invalid("eigenvalues must be finite and non-negative"));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("eigenvalues must be sorted in descending order"));
        }
        if !(noise_scale >= T::zero()) {
            return Err(Error::invalid("noise_scale must be non-negative"));
        }
        let hessian = SymMatrix::from_upper(d, |i, j| {
            eigenvalues
                .iter()
                .zip(&basis)
                .fold(T::zero(), |acc, (&l, u)| acc + l * u[i] * u[j])
        });
        let noise_std = eigenvalues
            .iter()
            .map(|&l| (noise_scale * power(l, noise_exponent)).sqrt())
            .collect();
        Ok(Self { eigenvalues, basis, hessian, minimizer, noise_scale, noise_exponent, noise_std })
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn eigenbasis(&self) -> &[Vec<T>] {
        &self.basis
    }

    pub fn hessian(&self) -> &SymMatrix<T> {
        &self.hessian
    }

    pub fn minimizer(&self) -> &[T] {
        &self.minimizer
    }

    pub fn noise_scale(&self) -> T {
        self.noise_scale
    }

    pub fn noise_exponent(&self) -> T {
        self.noise_exponent
    }

    /// Per-eigendirection noise variances `σ_r² = κ λ_r^γ`.
    pub fn noise_variances(&self) -> Vec<T> {
        self.noise_std.iter().map(|&s| s * s).collect()
    }

    /// The centred noise vector `U (σ ⊙ ξ)` drawn for `key`.
    pub fn noise(&self, key: &StreamKey) -> Vec<T> {
        let mut rng = key.rng(Purpose::Noise);
        let mut out = vec![T::zero(); self.dim()];
        for (u, &s) in self.basis.iter().zip(&self.noise_std) {
            let xi: T = standard_normal(&mut rng);
            axpy(s * xi, u, &mut out);
        }
        out
    }
}

/// `x^p` with `0^p = 0` for positive `p`.
fn power<T: Scalar>(x: T, p: T) -> T {
    if x == T::zero() {
        if p == T::zero() { T::one() } else { T::zero() }
    } else {
        x.powf(p)
    }
}

impl<T: Scalar> LossModel<T> for QuadraticModel<T> {
    fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn loss(&self, theta: &[T]) -> Result<T> {
        check_dim(self.dim(), theta.len())?;
        let d: Vec<T> = theta.iter().zip(&self.minimizer).map(|(&a, &b)| a - b).collect();
        Ok(T::lit(0.5) * self.hessian.bilinear(&d, &d))
    }

    fn full_gradient(&self, theta: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim(), theta.len())?;
        let d: Vec<T> = theta.iter().zip(&self.minimizer).map(|(&a, &b)| a - b).collect();
        Ok(self.hessian.matvec(&d))
    }

    fn stochastic_gradient(&self, theta: &[T], key: &StreamKey, _batch_size: usize) -> Result<Vec<T>> {
        let mut g = self.full_gradient(theta)?;
        if self.noise_scale > T::zero() {
            let eps = self.noise(key);
            axpy(T::one(), &eps, &mut g);
        }
        Ok(g)
    }

    fn hvp(&self, _theta: &[T], v: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim(), v.len())?;
        Ok(self.hessian.matvec(v))
    }

    fn exact_hessian_eigenpairs(&self) -> Option<EigenPairs<T>> {
        Some(EigenPairs {
            values: self.eigenvalues.clone(),
            vectors: self.basis.clone(),
            converged: true,
        })
    }

    fn initial_params(&self, seed: u64) -> Vec<T> {
        let mut rng = rng_for(seed, Purpose::Init, &[2]);
        let offset: Vec<T> = gaussian_vec(&mut rng, self.dim());
        self.minimizer.iter().zip(&offset).map(|(&m, &o)| m + o).collect()
    }
}

/// `n` values from `hi` down to `lo`, evenly spaced in log scale.
pub fn log_spaced<T: Scalar>(lo: T, hi: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..n)
        .map(|i| {
            let t = T::from_usize_lossy(i) / T::from_usize_lossy(n - 1);
            (a + (b - a) * t).exp()
        })
        .collect()
}

/// Columns of a Haar-like random orthogonal matrix (Gram-Schmidt, twice).
fn random_orthonormal<T: Scalar>(d: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = rng_for(seed, Purpose::Basis, &[d as u64]);
    let mut cols: Vec<Vec<T>> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: Vec<T> = gaussian_vec(&mut rng, d);
        for _ in 0..2 {
            for u in &cols {
                let c = dot(u, &v);
                axpy(-c, u, &mut v);
            }
        }
        let n = norm(&v);
        if n > T::lit(1e-3) {
            scale(T::one() / n, &mut v);
            cols.push(v);
        }
    }
    cols
}
