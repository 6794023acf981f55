use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::log_spaced;

/// Which protocol to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Spectrum,
    Alignment,
    DomBulk,
    GapSweep,
    TauAblation,
    FilterSweep,
    VerifyTheory,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Spectrum,
        ExperimentKind::Alignment,
        ExperimentKind::DomBulk,
        ExperimentKind::GapSweep,
        ExperimentKind::TauAblation,
        ExperimentKind::FilterSweep,
        ExperimentKind::VerifyTheory,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Alignment => "alignment",
            ExperimentKind::DomBulk => "dom-bulk",
            ExperimentKind::GapSweep => "gap-sweep",
            ExperimentKind::TauAblation => "tau-ablation",
            ExperimentKind::FilterSweep => "filter-sweep",
            ExperimentKind::VerifyTheory => "verify-theory",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

/// Full experiment description, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub subspace: SubspaceConfig,
    #[serde(default)]
    pub probe: ProbeSettings,
    #[serde(default)]
    pub dom_bulk: DomBulkConfig,
    #[serde(default)]
    pub tau_ablation: TauAblationConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub theory: TheoryConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Quadratic(QuadraticConfig),
    Mlp(MlpConfig),
}

/// Quadratic with eigenvalues either listed or generated.
///
/// Generated spectra are log-spaced on `[lambda_min, lambda_max]`. With
/// `dominant > 0` the top `dominant` eigenvalues are log-spaced on
/// `[lambda_max / 2, lambda_max]` and the rest on
/// `[lambda_min, lambda_max / (2 separation)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticConfig {
    pub dim: usize,
    #[serde(default)]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub lambda_max: f64,
    #[serde(default = "lambda_min")]
    pub lambda_min: f64,
    #[serde(default)]
    pub dominant: usize,
    #[serde(default = "separation")]
    pub separation: f64,
    /// `κ` in `σ_r² = κ λ_r^γ`.
    #[serde(default = "kappa")]
    pub kappa: f64,
    /// `γ` in `σ_r² = κ λ_r^γ`.
    #[serde(default = "gamma")]
    pub gamma: f64,
    /// Seed for the eigenbasis and minimizer; defaults to the engine seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl QuadraticConfig {
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        if let Some(e) = &self.eigenvalues {
            if e.len() != self.dim {
                return Err(Error::Config(format!("model.eigenvalues has {} entries, dim is {}", e.len(), self.dim)));
            }
            let mut e = e.clone();
            e.sort_by(|a, b| b.total_cmp(a));
            return Ok(e);
        }
        if !(self.lambda_max > 0.0 && self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max) {
            return Err(Error::Config("need 0 < model.lambda_min <= model.lambda_max".into()));
        }
        if self.dominant == 0 {
            return Ok(log_spaced(self.lambda_min, self.lambda_max, self.dim));
        }
        if self.dominant >= self.dim {
            return Err(Error::Config(format!("model.dominant must be below dim {}", self.dim)));
        }
        if self.separation < 1.0 {
            return Err(Error::Config("model.separation must be >= 1".into()));
        }
        let dom_lo = 0.5 * self.lambda_max;
        let bulk_hi = dom_lo / self.separation;
        if self.lambda_min > bulk_hi {
            return Err(Error::Config(format!(
                "model.lambda_min must not exceed lambda_max / (2 separation) = {bulk_hi}"
            )));
        }
        let mut out = log_spaced(dom_lo, self.lambda_max, self.dominant);
        out.extend(log_spaced(self.lambda_min, bulk_hi, self.dim - self.dominant));
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    /// Layer widths including input and output, e.g. `[64, 32, 32, 10]`.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub reduction: Reduction,
    /// Finite-difference step for Hessian-vector products; scaled by
    /// `1 + ‖θ‖` when absent.
    #[serde(default)]
    pub fd_step: Option<f64>,
    /// Seed for data, partition, and initialization; defaults to the engine
    /// seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian class clusters; input dimension is `widths[0]`, class count
    /// `widths.last()`.
    Blobs {
        #[serde(default = "samples")]
        samples: usize,
        #[serde(default = "spread")]
        spread: f64,
        /// Constant added to every input coordinate.
        #[serde(default = "offset")]
        offset: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "samples")]
        samples: usize,
        /// Average-pool factor applied to the images, 1 for none.
        #[serde(default = "one_usize")]
        pool: usize,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Blobs { samples: samples(), spread: spread(), offset: offset() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(rename = "M", default = "workers")]
    pub workers: usize,
    #[serde(default = "tau")]
    pub tau: usize,
    /// Defaults to `0.5/λ_1` for quadratics and `0.05` for MLPs.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "rounds")]
    pub rounds: usize,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { workers: workers(), tau: tau(), eta: None, rounds: rounds(), batch_size: batch_size(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceConfig {
    #[serde(rename = "C", default = "dominant_dim")]
    pub dominant_dim: usize,
    #[serde(default = "capacities")]
    pub capacities: Vec<usize>,
    #[serde(default = "rel_threshold")]
    pub rel_threshold: f64,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        Self { dominant_dim: dominant_dim(), capacities: capacities(), rel_threshold: rel_threshold() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    #[serde(default = "cadence")]
    pub cadence: usize,
    /// Defaults to `4 (C + 5)`.
    #[serde(default)]
    pub lanczos_iters: Option<usize>,
    /// Defaults to `C + 5`.
    #[serde(default)]
    pub eigenvalues: Option<usize>,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { cadence: cadence(), lanczos_iters: None, eigenvalues: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomBulkConfig {
    /// Round at which the projected continuations branch off. Required for
    /// the dom-bulk experiment.
    #[serde(default)]
    pub switch_round: Option<usize>,
    /// Rounds between recomputations of the dominant eigenbasis.
    #[serde(default = "one_usize")]
    pub refresh: usize,
}

impl Default for DomBulkConfig {
    fn default() -> Self {
        Self { switch_round: None, refresh: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauAblationConfig {
    #[serde(default = "taus")]
    pub taus: Vec<usize>,
}

impl Default for TauAblationConfig {
    fn default() -> Self {
        Self { taus: taus() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Gap buffer capacity for the proxy basis; defaults to the first entry
    /// of `subspace.capacities`.
    #[serde(default)]
    pub capacity: Option<usize>,
    #[serde(default)]
    pub switch_round: usize,
    /// `α` values swept with `bulk_gain = 1`.
    #[serde(default = "gain_grid")]
    pub dom_gains: Vec<f64>,
    /// Bulk gains swept with `α = 1`.
    #[serde(default = "gain_grid")]
    pub bulk_gains: Vec<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { capacity: None, switch_round: 0, dom_gains: gain_grid(), bulk_gains: gain_grid() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    /// Frozen-center Monte-Carlo rounds.
    #[serde(default = "mc_rounds")]
    pub mc_rounds: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self { mc_rounds: mc_rounds() }
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn lambda_min() -> f64 {
    0.05
}
fn separation() -> f64 {
    10.0
}
fn kappa() -> f64 {
    1e-4
}
fn gamma() -> f64 {
    2.0
}
fn samples() -> usize {
    1000
}
fn spread() -> f64 {
    1.0
}
fn offset() -> f64 {
    2.0
}
fn workers() -> usize {
    4
}
fn tau() -> usize {
    5
}
fn rounds() -> usize {
    400
}
fn batch_size() -> usize {
    50
}
fn dominant_dim() -> usize {
    10
}
fn capacities() -> Vec<usize> {
    vec![12, 24, 36, 48]
}
fn rel_threshold() -> f64 {
    crate::subspace::DEFAULT_REL_THRESHOLD
}
fn cadence() -> usize {
    5
}
fn taus() -> Vec<usize> {
    vec![2, 5, 10]
}
fn gain_grid() -> Vec<f64> {
    vec![0.0, 0.1, 0.25, 0.5, 1.0, 1.25, 1.5, 1.75, 2.0]
}
fn mc_rounds() -> usize {
    50_000
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.subspace;
        if s.dominant_dim < 1 {
            return Err(Error::Config("subspace.C must be >= 1".into()));
        }
        if !(s.rel_threshold > 0.0 && s.rel_threshold < 1.0) {
            return Err(Error::Config("subspace.rel_threshold must lie in (0, 1)".into()));
        }
        if s.capacities.contains(&0) {
            return Err(Error::Config("subspace.capacities entries must be >= 1".into()));
        }
        let needs_caps = matches!(
            self.experiment,
            ExperimentKind::GapSweep | ExperimentKind::TauAblation | ExperimentKind::FilterSweep
        );
        if needs_caps && s.capacities.is_empty() && self.filter.capacity.is_none() {
            return Err(Error::Config(format!("subspace.capacities must be nonempty for {}", self.experiment.name())));
        }
        if self.experiment == ExperimentKind::DomBulk && self.dom_bulk.switch_round.is_none() {
            return Err(Error::Config("dom_bulk.switch_round is required for dom-bulk".into()));
        }
        if self.experiment == ExperimentKind::TauAblation && self.tau_ablation.taus.is_empty() {
            return Err(Error::Config("tau_ablation.taus must be nonempty".into()));
        }
        if self.experiment == ExperimentKind::VerifyTheory && !matches!(self.model, ModelConfig::Quadratic(_)) {
            return Err(Error::Config("verify-theory needs a quadratic model".into()));
        }
        if self.dom_bulk.refresh < 1 {
            return Err(Error::Config("dom_bulk.refresh must be >= 1".into()));
        }
        match &self.model {
            ModelConfig::Quadratic(q) => {
                q.spectrum()?;
                if s.dominant_dim > q.dim {
                    return Err(Error::Config(format!("subspace.C exceeds model dim {}", q.dim)));
                }
            }
            ModelConfig::Mlp(m) => {
                if m.widths.len() < 2 || m.widths.contains(&0) {
                    return Err(Error::Config("model.widths needs at least two positive entries".into()));
                }
                if let DatasetConfig::Idx { images, labels, .. } = &m.dataset {
                    for p in [images, labels] {
                        if !p.exists() {
                            return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn model_seed(&self) -> u64 {
        let explicit = match &self.model {
            ModelConfig::Quadratic(q) => q.seed,
            ModelConfig::Mlp(m) => m.seed,
        };
        explicit.unwrap_or(self.engine.seed)
    }
}
