//! Local SGD laboratory: worker-average gaps, their Gram-built proxy for the
//! dominant Hessian subspace, and the covariance theory that explains them.
//!
//! Numeric code is generic over [`Scalar`] (`f32`/`f64`); the aliases below
//! fix the scalar to `f64`, which is what the experiments use.

pub mod engine;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod models;
pub mod scalar;
pub mod stream;
pub mod subspace;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ParamVector = Vec<f64>;
pub type SymMatrix = linalg::SymMatrix<f64>;
pub type EigenPairs = linalg::EigenPairs<f64>;
pub type OrthonormalBasis = linalg::OrthonormalBasis<f64>;
pub type QuadraticModel = models::QuadraticModel<f64>;
pub type MlpModel = models::MlpModel<f64>;
pub type Dataset = models::Dataset<f64>;
pub type GapBuffer = subspace::GapBuffer<f64>;
pub type LocalSgdConfig = engine::LocalSgdConfig<f64>;
pub type RoundRecord = engine::RoundRecord<f64>;
pub type CovariancePrediction = theory::CovariancePrediction<f64>;
