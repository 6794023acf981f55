//! The Local SGD state machine: rounds of `tau` local steps on `M` workers,
//! worker-average gap extraction, and the synchronization policies.

mod training;

pub use training::{
    run_training, BasisSource, PolicyKind, PolicySchedule, ProbeConfig, RoundRecord, TrainingRun,
    TrainingStart,
};

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::linalg::vector::{axpy, ensure_finite, shifted_mean, sub};
use crate::linalg::OrthonormalBasis;
use crate::models::LossModel;
use crate::scalar::Scalar;
use crate::stream::StreamKey;

#[derive(Clone, Debug, PartialEq)]
pub struct LocalSgdConfig<T> {
    pub workers: usize,
    pub tau: usize,
    pub eta: T,
    pub rounds: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Run the worker phases of a round on the rayon pool. Results are
    /// identical either way.
    pub parallel: bool,
}

impl<T: Scalar> Default for LocalSgdConfig<T> {
    fn default() -> Self {
        Self { workers: 4, tau: 5, eta: T::lit(0.05), rounds: 2000, batch_size: 50, seed: 0, parallel: true }
    }
}

impl<T: Scalar> LocalSgdConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.workers < 2 {
            return Err(Error::invalid(format!("workers must be >= 2, got {}", self.workers)));
        }
        if self.tau < 1 {
            return Err(Error::invalid("tau must be >= 1"));
        }
        if !(self.eta > T::zero()) || !self.eta.is_finite() {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Everything one communication round produces.
#[derive(Clone, Debug)]
pub struct RoundResult<T> {
    /// `θ_i^{c,τ}` for each worker.
    pub worker_params: Vec<Vec<T>>,
    /// `θ̄^c + p̄^c`, the plain worker average.
    pub average: Vec<T>,
    /// `Δ_i = θ_i^{c,τ} − average`; they sum to zero.
    pub gaps: Vec<Vec<T>>,
    /// `p̄^c`, the mean displacement of the workers from the round's start.
    pub outer_step: Vec<T>,
}

/// One communication round from the synchronized point `center`.
///
/// Worker `i` at local step `s` draws its gradient with
/// `StreamKey::new(cfg.seed, round, i, s, cfg.tau)`, so the outcome does not
/// depend on execution order.
pub fn run_round<T: Scalar, M: LossModel<T> + ?Sized>(
    model: &M,
    center: &[T],
    cfg: &LocalSgdConfig<T>,
    round: usize,
) -> Result<RoundResult<T>> {
    cfg.validate()?;
    check_dim(model.dim(), center.len())?;
    let worker = |i: usize| -> Result<Vec<T>> {
        let mut theta = center.to_vec();
        for s in 0..cfg.tau {
            let key = StreamKey::new(cfg.seed, round, i, s, cfg.tau);
            let g = model.stochastic_gradient(&theta, &key, cfg.batch_size)?;
            axpy(-cfg.eta, &g, &mut theta);
            ensure_finite(&theta, &format!("parameters of worker {i} after local step {}", s + 1))?;
        }
        Ok(theta)
    };
    let worker_params: Vec<Vec<T>> = if cfg.parallel {
        (0..cfg.workers).into_par_iter().map(worker).collect::<Result<_>>()?
    } else {
        (0..cfg.workers).map(worker).collect::<Result<_>>()?
    };
    Ok(assemble_round(center, worker_params))
}

/// Average, gaps, and outer step from final worker parameters.
///
/// Works on displacements `p_i = θ_i − center`: `p̄` is their mean and
/// `Δ_i = p_i − p̄`. Identical workers therefore yield exactly zero gaps.
pub fn assemble_round<T: Scalar>(center: &[T], worker_params: Vec<Vec<T>>) -> RoundResult<T> {
    let displacements: Vec<Vec<T>> = worker_params.iter().map(|w| sub(w, center)).collect();
    let outer_step = shifted_mean(&displacements);
    let gaps = displacements.iter().map(|p| sub(p, &outer_step)).collect();
    let mut average = center.to_vec();
    axpy(T::one(), &outer_step, &mut average);
    RoundResult { worker_params, average, gaps, outer_step }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyncVariant {
    Standard,
    DomProjected,
    BulkProjected,
    Filtered,
}

impl SyncVariant {
    pub fn name(self) -> &'static str {
        match self {
            SyncVariant::Standard => "standard",
            SyncVariant::DomProjected => "dom_projected",
            SyncVariant::BulkProjected => "bulk_projected",
            SyncVariant::Filtered => "filtered",
        }
    }
}

/// How the outer step `p̄` is applied at synchronization.
///
/// `dom_gain`/`bulk_gain` scale the components of `p̄` inside and outside
/// `span(basis)`; they only matter for [`SyncVariant::Filtered`].
#[derive(Clone, Debug)]
pub struct SyncPolicy<T> {
    pub variant: SyncVariant,
    pub basis: Option<OrthonormalBasis<T>>,
    pub dom_gain: T,
    pub bulk_gain: T,
}

impl<T: Scalar> SyncPolicy<T> {
    pub fn standard() -> Self {
        Self { variant: SyncVariant::Standard, basis: None, dom_gain: T::one(), bulk_gain: T::one() }
    }

    pub fn dom_projected(basis: OrthonormalBasis<T>) -> Self {
        Self { variant: SyncVariant::DomProjected, basis: Some(basis), dom_gain: T::one(), bulk_gain: T::zero() }
    }

    pub fn bulk_projected(basis: OrthonormalBasis<T>) -> Self {
        Self { variant: SyncVariant::BulkProjected, basis: Some(basis), dom_gain: T::zero(), bulk_gain: T::one() }
    }

    pub fn filtered(basis: OrthonormalBasis<T>, dom_gain: T, bulk_gain: T) -> Self {
        Self { variant: SyncVariant::Filtered, basis: Some(basis), dom_gain, bulk_gain }
    }
}

/// Next synchronized point `θ̄ + (applied step)` under `policy`.
pub fn apply_sync<T: Scalar>(center: &[T], outer_step: &[T], policy: &SyncPolicy<T>) -> Result<Vec<T>> {
    check_dim(center.len(), outer_step.len())?;
    let step = match policy.variant {
        SyncVariant::Standard => outer_step.to_vec(),
        variant => {
            let basis = policy.basis.as_ref().ok_or(Error::MissingBasis(variant.name()))?;
            match variant {
                SyncVariant::DomProjected => basis.project(outer_step)?,
                SyncVariant::BulkProjected => basis.project_out(outer_step)?,
                _ if policy.dom_gain == T::one() && policy.bulk_gain == T::one() => outer_step.to_vec(),
                _ => {
                    let dom = basis.project(outer_step)?;
                    outer_step
                        .iter()
                        .zip(&dom)
                        .map(|(&p, &d)| policy.dom_gain * d + policy.bulk_gain * (p - d))
                        .collect()
                }
            }
        }
    };
    let mut next = center.to_vec();
    axpy(T::one(), &step, &mut next);
    Ok(next)
}

#[cfg(test)]
mod tests;
