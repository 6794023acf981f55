use crate::engine::{apply_sync, run_round, LocalSgdConfig, SyncPolicy, SyncVariant};
use crate::error::{Error, Result};
use crate::linalg::vector::{ensure_finite, norm};
use crate::linalg::{lanczos_top_k, EigenPairs, LanczosConfig, OrthonormalBasis};
use crate::models::LossModel;
use crate::scalar::Scalar;
use crate::stream::{derive_seed, Purpose};
use crate::subspace::{chi, rho, GapBuffer};

/// Synchronization rule that takes over from standard averaging.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyKind<T> {
    Standard,
    DomProjected,
    BulkProjected,
    Filtered { dom_gain: T, bulk_gain: T },
}

impl<T: Scalar> PolicyKind<T> {
    pub fn variant(&self) -> SyncVariant {
        match self {
            PolicyKind::Standard => SyncVariant::Standard,
            PolicyKind::DomProjected => SyncVariant::DomProjected,
            PolicyKind::BulkProjected => SyncVariant::BulkProjected,
            PolicyKind::Filtered { .. } => SyncVariant::Filtered,
        }
    }

    pub fn name(&self) -> &'static str {
        self.variant().name()
    }
}

/// Where a projected or filtered policy gets its basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisSource {
    /// Top-`C` Hessian eigenvectors at `θ̄^c`, recomputed every `refresh` rounds.
    TrueDominant { refresh: usize },
    /// Gram basis of a FIFO gap buffer of this capacity, rebuilt every round
    /// after the round's own gaps are inserted.
    GapProxy { capacity: usize },
}

/// Standard Local SGD until `switch_round`, then `after`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicySchedule<T> {
    pub switch_round: usize,
    pub after: PolicyKind<T>,
    pub basis: BasisSource,
}

impl<T: Scalar> PolicySchedule<T> {
    pub fn standard() -> Self {
        Self { switch_round: 0, after: PolicyKind::Standard, basis: BasisSource::TrueDominant { refresh: 1 } }
    }

    pub fn active(&self, round: usize) -> PolicyKind<T> {
        if round >= self.switch_round { self.after } else { PolicyKind::Standard }
    }
}

/// What to measure and how often. Probes run at `θ̄^c` before round `c`'s
/// local steps, for every `c` divisible by `cadence`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig<T> {
    /// Rounds between probes; 0 disables probing.
    pub cadence: usize,
    /// `C`, the dominant subspace dimension.
    pub dominant_dim: usize,
    /// Leading Hessian eigenvalues to report (`C + 5` by default); 0 skips the
    /// spectrum unless `chi`/`rho` need it.
    pub spectrum_count: usize,
    pub lanczos_iters: usize,
    /// Gap buffer capacities whose `rho` is reported.
    pub capacities: Vec<usize>,
    pub rel_threshold: T,
    pub measure_chi: bool,
    pub measure_accuracy: bool,
}

impl<T: Scalar> ProbeConfig<T> {
    pub fn new(cadence: usize, dominant_dim: usize) -> Self {
        Self {
            cadence,
            dominant_dim,
            spectrum_count: dominant_dim + 5,
            lanczos_iters: 4 * (dominant_dim + 5),
            capacities: Vec::new(),
            rel_threshold: T::lit(crate::subspace::DEFAULT_REL_THRESHOLD),
            measure_chi: true,
            measure_accuracy: false,
        }
    }

    fn needs_dominant(&self) -> bool {
        self.measure_chi || !self.capacities.is_empty()
    }

    fn eigen_count(&self) -> usize {
        let need_c = if self.needs_dominant() { self.dominant_dim } else { 0 };
        self.spectrum_count.max(need_c)
    }

    pub fn probes(&self, round: usize) -> bool {
        self.cadence > 0 && round.is_multiple_of(self.cadence)
    }
}

/// One row of telemetry. Metrics that were not measured or are undefined are
/// `None`, never zero.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord<T> {
    pub round: usize,
    /// `round * tau`
    pub local_step: usize,
    pub policy: &'static str,
    pub train_loss: T,
    pub train_accuracy: Option<T>,
    pub eigenvalues: Vec<T>,
    pub spectrum_converged: Option<bool>,
    pub grad_norm: T,
    pub chi: Option<T>,
    /// One entry per probe capacity, in `ProbeConfig::capacities` order.
    pub rho: Vec<Option<T>>,
    pub ranks: Vec<usize>,
    /// Mean `‖Δ_i‖` of the most recent round, if any has run.
    pub gap_norm: Option<T>,
}

#[derive(Clone, Debug)]
pub struct TrainingStart<T> {
    pub round: usize,
    pub params: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct TrainingRun<T> {
    pub records: Vec<RoundRecord<T>>,
    pub final_params: Vec<T>,
    /// Training loss at `final_params`.
    pub final_loss: T,
}

fn dominant_spectrum<T: Scalar, M: LossModel<T> + ?Sized>(
    model: &M,
    theta: &[T],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<EigenPairs<T>> {
    if let Some(exact) = model.exact_hessian_eigenpairs() {
        return Ok(exact.truncate(k));
    }
    let cfg = LanczosConfig::new(k, iters.max(k), seed);
    lanczos_top_k(|v: &[T]| model.hvp(theta, v), model.dim(), &cfg)
}

/// Rounds `start.round .. cfg.rounds` of Local SGD under `schedule`, probing
/// as configured.
pub fn run_training<T: Scalar, M: LossModel<T> + ?Sized>(
    model: &M,
    cfg: &LocalSgdConfig<T>,
    schedule: &PolicySchedule<T>,
    probes: &ProbeConfig<T>,
    start: TrainingStart<T>,
) -> Result<TrainingRun<T>> {
    cfg.validate()?;
    crate::error::check_dim(model.dim(), start.params.len())?;
    let c_dim = probes.dominant_dim;
    if probes.needs_dominant() && (c_dim == 0 || c_dim > model.dim()) {
        return Err(Error::invalid(format!("dominant_dim must be in 1..={}", model.dim())));
    }

    let mut theta = start.params;
    let mut buffers: Vec<GapBuffer<T>> = probes
        .capacities
        .iter()
        .map(|&b| GapBuffer::with_threshold(b, probes.rel_threshold))
        .collect();
    let mut policy_buffer = match schedule.basis {
        BasisSource::GapProxy { capacity } => Some(GapBuffer::with_threshold(capacity, probes.rel_threshold)),
        BasisSource::TrueDominant { .. } => None,
    };
    let mut cached_dominant: Option<OrthonormalBasis<T>> = None;
    let mut last_gap_norm: Option<T> = None;
    let mut records = Vec::new();

    for round in start.round..cfg.rounds {
        let mut step = || -> Result<()> {
            let policy = schedule.active(round);
            let probe = probes.probes(round);
            let needs_true_basis = matches!(policy, PolicyKind::DomProjected | PolicyKind::BulkProjected)
                && matches!(schedule.basis, BasisSource::TrueDominant { .. });
            let refresh_due = match schedule.basis {
                BasisSource::TrueDominant { refresh } => {
                    cached_dominant.is_none() || (round - schedule.switch_round.min(round)) % refresh.max(1) == 0
                }
                BasisSource::GapProxy { .. } => false,
            };

            let k_probe = if probe { probes.eigen_count() } else { 0 };
            let k_policy = if needs_true_basis && refresh_due { c_dim } else { 0 };
            let spectrum = if k_probe.max(k_policy) > 0 {
                let seed = derive_seed(cfg.seed, Purpose::Lanczos, &[round as u64]);
                let iters = probes.lanczos_iters.max(2 * k_probe.max(k_policy));
                Some(dominant_spectrum(model, &theta, k_probe.max(k_policy), iters, seed)?)
            } else {
                None
            };
            let dominant = match &spectrum {
                Some(s) if s.len() >= c_dim && c_dim > 0 => Some(OrthonormalBasis::from_eigenpairs(s, c_dim)?),
                _ => None,
            };
            if k_policy > 0 {
                cached_dominant = dominant.clone();
            }

            if probe {
                let (loss, grad) = (model.loss(&theta)?, model.full_gradient(&theta)?);
                let accuracy = if probes.measure_accuracy { model.accuracy(&theta)? } else { None };
                let chi_value = match (&dominant, probes.measure_chi, norm(&grad) > T::zero()) {
                    (Some(u), true, true) => Some(chi(u, &grad)?),
                    _ => None,
                };
                let mut rho_values = Vec::with_capacity(buffers.len());
                let mut ranks = Vec::with_capacity(buffers.len());
                for buffer in &buffers {
                    let q = buffer.build_basis()?;
                    ranks.push(q.rank());
                    rho_values.push(match &dominant {
                        Some(u) => match rho(u, &q, &grad) {
                            Ok(r) => Some(r),
                            Err(Error::Undefined(_)) => None,
                            Err(e) => return Err(e),
                        },
                        None => None,
                    });
                }
                let eigenvalues = spectrum
                    .as_ref()
                    .map(|s| s.values.iter().take(probes.spectrum_count).copied().collect())
                    .unwrap_or_default();
                records.push(RoundRecord {
                    round,
                    local_step: round * cfg.tau,
                    policy: policy.name(),
                    train_loss: loss,
                    train_accuracy: accuracy,
                    eigenvalues,
                    spectrum_converged: spectrum.as_ref().map(|s| s.converged),
                    grad_norm: norm(&grad),
                    chi: chi_value,
                    rho: rho_values,
                    ranks,
                    gap_norm: last_gap_norm,
                });
            }

            let result = run_round(model, &theta, cfg, round)?;
            for buffer in buffers.iter_mut() {
                buffer.push_round_gaps(&result.gaps)?;
            }
            if let Some(b) = policy_buffer.as_mut() {
                b.push_round_gaps(&result.gaps)?;
            }
            let total: T = result.gaps.iter().map(|g| norm(g)).sum();
            last_gap_norm = Some(total / T::from_usize_lossy(result.gaps.len()));

            let sync = match policy {
                PolicyKind::Standard => SyncPolicy::standard(),
                kind => {
                    let basis = match (&schedule.basis, &policy_buffer) {
                        (BasisSource::GapProxy { .. }, Some(b)) => b.build_basis()?,
                        _ => cached_dominant.clone().ok_or(Error::MissingBasis(kind.name()))?,
                    };
                    match kind {
                        PolicyKind::DomProjected => SyncPolicy::dom_projected(basis),
                        PolicyKind::BulkProjected => SyncPolicy::bulk_projected(basis),
                        PolicyKind::Filtered { dom_gain, bulk_gain } => {
                            SyncPolicy::filtered(basis, dom_gain, bulk_gain)
                        }
                        PolicyKind::Standard => unreachable!(),
                    }
                }
            };
            theta = apply_sync(&theta, &result.outer_step, &sync)?;
            ensure_finite(&theta, "synchronized parameters")?;
            Ok(())
        };
        step().map_err(|e| e.at_round(round))?;
    }

    let final_loss = model.loss(&theta)?;
    Ok(TrainingRun { records, final_params: theta, final_loss })
}
