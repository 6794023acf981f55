//! Experiment protocols: config parsing, orchestration of training runs and
//! sweeps, and CSV/manifest emission.

mod config;
mod output;

pub use config::{
    DatasetConfig, DomBulkConfig, EngineConfig, ExperimentConfig, ExperimentKind, FilterConfig, MlpConfig,
    ModelConfig, ProbeSettings, QuadraticConfig, Reduction, SubspaceConfig, TauAblationConfig, TheoryConfig,
};
pub use output::{smooth_ema, Cell, Table};

use std::path::Path;

use crate::engine::{
    run_training, BasisSource, LocalSgdConfig, PolicyKind, PolicySchedule, ProbeConfig, RoundRecord, TrainingRun,
    TrainingStart,
};
use crate::error::{Error, Result};
use crate::models::{generate_blobs, load_idx, partition_iid, LossModel, MlpModel, MseReduction, QuadraticModel};
use crate::theory::{fit_noise_exponent, in_basis, monte_carlo_gap_covariance, predict_for_model, psi};

/// Name of the key=value manifest written next to the CSVs.
pub const MANIFEST: &str = "manifest.txt";

/// A model built from its config block.
pub enum Model {
    Quadratic(QuadraticModel<f64>),
    Mlp(MlpModel<f64>),
}

impl Model {
    pub fn as_loss(&self) -> &dyn LossModel<f64> {
        match self {
            Model::Quadratic(m) => m,
            Model::Mlp(m) => m,
        }
    }
}

pub fn build_model(cfg: &ExperimentConfig) -> Result<Model> {
    let seed = cfg.model_seed();
    match &cfg.model {
        ModelConfig::Quadratic(q) => {
            Ok(Model::Quadratic(QuadraticModel::new(q.spectrum()?, q.kappa, q.gamma, seed)?))
        }
        ModelConfig::Mlp(m) => {
            let (input, classes) = (m.widths[0], *m.widths.last().unwrap());
            let data = match &m.dataset {
                DatasetConfig::Blobs { samples, spread, offset } => {
                    generate_blobs(classes, input, *samples, *spread, seed)?.shifted(*offset)
                }
                DatasetConfig::Idx { images, labels, samples, pool } => {
                    let raw = load_idx::<f64>(images, labels, *samples)?;
                    let side = (raw.input_dim() as f64).sqrt().round() as usize;
                    if *pool > 1 { raw.average_pool(side, side, *pool)? } else { raw }
                }
            };
            if data.input_dim() != input {
                return Err(Error::Config(format!(
                    "dataset input dimension {} does not match model.widths[0] = {input}",
                    data.input_dim()
                )));
            }
            if data.classes > classes {
                return Err(Error::Config(format!("dataset has {} classes, output width is {classes}", data.classes)));
            }
            let data = partition_iid(&data, cfg.engine.workers, seed)?;
            let reduction = match m.reduction {
                Reduction::Sum => MseReduction::Sum,
                Reduction::Mean => MseReduction::Mean,
            };
            let mut model = MlpModel::new(m.widths.clone(), data, reduction)?;
            if let Some(h) = m.fd_step {
                model = model.with_fd_step(h);
            }
            Ok(Model::Mlp(model))
        }
    }
}

impl ExperimentConfig {
    /// Copy with every defaulted value made explicit, as recorded in the
    /// manifest.
    pub fn resolved(&self) -> Result<ExperimentConfig> {
        self.validate()?;
        let mut r = self.clone();
        let seed = self.model_seed();
        match &mut r.model {
            ModelConfig::Quadratic(q) => {
                let spectrum = q.spectrum()?;
                if r.engine.eta.is_none() {
                    r.engine.eta = Some(0.5 / spectrum[0]);
                }
                q.seed = Some(seed);
            }
            ModelConfig::Mlp(m) => {
                r.engine.eta.get_or_insert(0.05);
                m.seed = Some(seed);
            }
        }
        let c = r.subspace.dominant_dim;
        r.probe.eigenvalues.get_or_insert(c + 5);
        let k = r.probe.eigenvalues.unwrap().max(c);
        r.probe.lanczos_iters.get_or_insert(4 * k);
        r.dom_bulk.switch_round.get_or_insert(0);
        if r.filter.capacity.is_none() {
            r.filter.capacity = r.subspace.capacities.first().copied();
        }
        r.output.get_or_insert_with(|| "out".into());
        Ok(r)
    }

    pub fn engine_config(&self) -> LocalSgdConfig<f64> {
        let e = &self.engine;
        LocalSgdConfig {
            workers: e.workers,
            tau: e.tau,
            eta: e.eta.unwrap_or(0.05),
            rounds: e.rounds,
            batch_size: e.batch_size,
            seed: e.seed,
            parallel: true,
        }
    }

    fn probe_config(&self) -> ProbeConfig<f64> {
        let c = self.subspace.dominant_dim;
        let mut p = ProbeConfig::new(self.probe.cadence, c);
        p.spectrum_count = 0;
        p.lanczos_iters = self.probe.lanczos_iters.unwrap_or(4 * (c + 5));
        p.rel_threshold = self.subspace.rel_threshold;
        p.measure_chi = false;
        p.measure_accuracy = true;
        p
    }
}

/// Tables and manifest lines produced by one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub tables: Vec<Table>,
    pub manifest: Vec<(String, String)>,
}

impl ExperimentOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes every table, the manifest, and, if `ema` is given, a smoothed
    /// `*.ema.csv` copy of each telemetry table.
    pub fn write(&self, dir: &Path, ema: Option<f64>) -> Result<()> {
        if let Some(beta) = ema {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("ema beta must lie in [0, 1), got {beta}")));
            }
        }
        std::fs::create_dir_all(dir)?;
        for t in &self.tables {
            t.write_csv(&dir.join(&t.name))?;
            if let (Some(beta), true) = (ema, t.smoothable) {
                let name = t.name.trim_end_matches(".csv");
                t.smoothed(beta).write_csv(&dir.join(format!("{name}.ema.csv")))?;
            }
        }
        let mut text = String::new();
        for (k, v) in &self.manifest {
            text.push_str(&format!("{k}={v}\n"));
        }
        if let Some(beta) = ema {
            text.push_str(&format!("ema_beta={beta}\n"));
        }
        std::fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }
}

/// Which telemetry columns a table carries.
#[derive(Clone, Debug, Default)]
struct Columns {
    eigenvalues: usize,
    chi: bool,
    capacities: Vec<usize>,
    gap_norm: bool,
}

impl Columns {
    fn headers(&self) -> Vec<String> {
        let mut h: Vec<String> =
            ["round", "local_step", "policy", "train_loss", "train_accuracy", "grad_norm"].map(String::from).into();
        if self.eigenvalues > 0 {
            h.extend((1..=self.eigenvalues).map(|i| format!("lambda_{i}")));
            h.push("spectrum_converged".into());
        }
        if self.chi {
            h.push("chi".into());
        }
        for b in &self.capacities {
            h.push(format!("rho_B{b}"));
            h.push(format!("rank_B{b}"));
        }
        if self.gap_norm {
            h.push("gap_norm".into());
        }
        h
    }

    fn table(&self, name: String, records: &[RoundRecord<f64>]) -> Table {
        let mut t = Table::new(name, self.headers(), true);
        for r in records {
            let mut row: Vec<Cell> = vec![
                r.round.into(),
                r.local_step.into(),
                r.policy.into(),
                r.train_loss.into(),
                r.train_accuracy.into(),
                r.grad_norm.into(),
            ];
            if self.eigenvalues > 0 {
                row.extend((0..self.eigenvalues).map(|i| Cell::from(r.eigenvalues.get(i).copied())));
                row.push(r.spectrum_converged.map(|c| if c { "true" } else { "false" }).into());
            }
            if self.chi {
                row.push(r.chi.into());
            }
            for j in 0..self.capacities.len() {
                row.push(r.rho.get(j).copied().flatten().into());
                row.push(r.ranks.get(j).copied().into());
            }
            if self.gap_norm {
                row.push(r.gap_norm.into());
            }
            t.rows.push(row);
        }
        t
    }
}

/// Runs the configured experiment in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let cfg = cfg.resolved()?;
    let model = build_model(&cfg)?;
    let m = model.as_loss();
    let engine = cfg.engine_config();
    let start = || TrainingStart { round: 0, params: m.initial_params(cfg.model_seed()) };
    let name = cfg.experiment.name();
    let mut manifest = Vec::new();
    let resolved = toml::Value::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    output::flatten_toml("", &resolved, &mut manifest);
    manifest.push(("model.parameters".into(), m.dim().to_string()));
    if let Model::Quadratic(q) = &model {
        let spectrum: Vec<String> = q.eigenvalues().iter().map(f64::to_string).collect();
        manifest.push(("model.spectrum".into(), spectrum.join(" ")));
    }
    let mut tables = Vec::new();
    let caps = cfg.subspace.capacities.clone();

    match cfg.experiment {
        ExperimentKind::Spectrum => {
            let mut p = cfg.probe_config();
            p.spectrum_count = cfg.probe.eigenvalues.unwrap();
            let run = run_training(m, &engine, &PolicySchedule::standard(), &p, start())?;
            let cols = Columns { eigenvalues: p.spectrum_count, ..Default::default() };
            tables.push(cols.table(format!("{name}.csv"), &run.records));
            summarize(&mut manifest, "", &run);
        }
        ExperimentKind::Alignment => {
            let mut p = cfg.probe_config();
            p.measure_chi = true;
            let run = run_training(m, &engine, &PolicySchedule::standard(), &p, start())?;
            let cols = Columns { chi: true, gap_norm: true, ..Default::default() };
            tables.push(cols.table(format!("{name}.csv"), &run.records));
            summarize(&mut manifest, "", &run);
        }
        ExperimentKind::GapSweep => {
            let mut p = cfg.probe_config();
            p.measure_chi = true;
            p.capacities = caps.clone();
            let run = run_training(m, &engine, &PolicySchedule::standard(), &p, start())?;
            let cols = Columns { chi: true, capacities: caps, gap_norm: true, ..Default::default() };
            tables.push(cols.table(format!("{name}.csv"), &run.records));
            summarize(&mut manifest, "", &run);
        }
        ExperimentKind::TauAblation => {
            let mut p = cfg.probe_config();
            p.measure_chi = true;
            p.capacities = caps.clone();
            let cols = Columns { chi: true, capacities: caps, gap_norm: true, ..Default::default() };
            // Every leg covers the same number of local steps as the base run.
            let steps = engine.rounds * engine.tau;
            for &tau in &cfg.tau_ablation.taus {
                let leg_cfg = LocalSgdConfig { tau, rounds: steps.div_ceil(tau), ..engine.clone() };
                let run = run_training(m, &leg_cfg, &PolicySchedule::standard(), &p, start())?;
                tables.push(cols.table(format!("{name}_tau{tau}.csv"), &run.records));
                summarize(&mut manifest, &format!("tau{tau}."), &run);
            }
        }
        ExperimentKind::DomBulk => {
            let switch = cfg.dom_bulk.switch_round.unwrap().min(engine.rounds);
            let p = cfg.probe_config();
            let head_cfg = LocalSgdConfig { rounds: switch, ..engine.clone() };
            let head = run_training(m, &head_cfg, &PolicySchedule::standard(), &p, start())?;
            manifest.push(("switch_loss".into(), head.final_loss.to_string()));
            let cols = Columns::default();
            let refresh = cfg.dom_bulk.refresh;
            for kind in [PolicyKind::Standard, PolicyKind::DomProjected, PolicyKind::BulkProjected] {
                let schedule = PolicySchedule {
                    switch_round: switch,
                    after: kind,
                    basis: BasisSource::TrueDominant { refresh },
                };
                let resume = TrainingStart { round: switch, params: head.final_params.clone() };
                let mut run = run_training(m, &engine, &schedule, &p, resume)?;
                let mut records = head.records.clone();
                records.append(&mut run.records);
                run.records = records;
                tables.push(cols.table(format!("{name}_{}.csv", kind.name()), &run.records));
                summarize(&mut manifest, &format!("{}.", kind.name()), &run);
                manifest.push((
                    format!("{}.loss_decrease", kind.name()),
                    (head.final_loss - run.final_loss).to_string(),
                ));
            }
        }
        ExperimentKind::FilterSweep => {
            let capacity = cfg.filter.capacity.ok_or_else(|| Error::Config("filter.capacity is required".into()))?;
            let p = cfg.probe_config();
            let cols = Columns { gap_norm: true, ..Default::default() };
            let mut legs: Vec<(f64, f64)> = cfg.filter.dom_gains.iter().map(|&a| (a, 1.0)).collect();
            legs.extend(cfg.filter.bulk_gains.iter().map(|&b| (1.0, b)));
            let mut seen = Vec::new();
            legs.retain(|leg| {
                let fresh = !seen.contains(leg);
                seen.push(*leg);
                fresh
            });
            let mut summary = Table::new(
                format!("{name}_summary.csv"),
                ["leg", "dom_gain", "bulk_gain", "final_loss", "status"].map(String::from).into(),
                false,
            );
            for (i, &(alpha, beta)) in legs.iter().enumerate() {
                let schedule = PolicySchedule {
                    switch_round: cfg.filter.switch_round,
                    after: PolicyKind::Filtered { dom_gain: alpha, bulk_gain: beta },
                    basis: BasisSource::GapProxy { capacity },
                };
                let leg = format!("a{alpha}_b{beta}");
                let file = format!("{name}_{leg}.csv");
                match run_training(m, &engine, &schedule, &p, start()) {
                    Ok(run) => {
                        tables.push(cols.table(file, &run.records));
                        summary.rows.push(vec![i.into(), alpha.into(), beta.into(), run.final_loss.into(), "ok".into()]);
                        summarize(&mut manifest, &format!("{leg}."), &run);
                    }
                    Err(e) if e.is_divergence() => {
                        tables.push(cols.table(file, &[]));
                        summary.rows.push(vec![i.into(), alpha.into(), beta.into(), Cell::Empty, "diverged".into()]);
                        manifest.push((format!("{leg}.error"), e.to_string()));
                    }
                    Err(e) => return Err(e),
                }
            }
            tables.push(summary);
        }
        ExperimentKind::VerifyTheory => {
            let Model::Quadratic(q) = &model else {
                return Err(Error::Config("verify-theory needs a quadratic model".into()));
            };
            let n = cfg.theory.mc_rounds;
            let center = q.initial_params(cfg.model_seed());
            let emp = monte_carlo_gap_covariance(q, &engine, n, &center)?;
            let pred = predict_for_model(q, &engine)?;
            let rel_se = (2.0 / n as f64).sqrt();
            let mut t = Table::new(
                format!("{name}.csv"),
                ["direction", "lambda", "sigma_sq", "psi", "predicted_var", "empirical_var", "rel_error", "rel_std_error"]
                    .map(String::from)
                    .into(),
                false,
            );
            let sigma = q.noise_variances();
            for (r, &l) in q.eigenvalues().iter().enumerate() {
                let (p_r, e_r) = (pred.variances[r], emp.variances[r]);
                let rel = if p_r > 0.0 { Some((e_r - p_r) / p_r) } else { None };
                t.rows.push(vec![
                    (r + 1).into(),
                    l.into(),
                    sigma[r].into(),
                    psi(engine.tau, engine.eta * l).into(),
                    p_r.into(),
                    e_r.into(),
                    rel.into(),
                    rel_se.into(),
                ]);
            }
            tables.push(t);
            let gamma = fit_noise_exponent(q.eigenvalues(), &emp.variances, engine.eta, engine.tau, engine.workers);
            manifest.push(("fitted_gamma".into(), gamma.map(|g| g.to_string()).unwrap_or_default()));
            manifest.push(("max_offdiag_z".into(), max_offdiagonal_z(&emp.matrix, q.eigenbasis(), n)
                .map(|z| z.to_string())
                .unwrap_or_default()));
            manifest.push(("divergent".into(), pred.divergent.to_string()));
        }
    }

    manifest.push(("files".into(), tables.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join(" ")));
    Ok(ExperimentOutput { tables, manifest })
}

/// Largest `|C_rs| / SE(C_rs)` over off-diagonal eigenbasis entries of an
/// empirical covariance from `n` samples, with `SE = sqrt(C_rr C_ss / n)`.
pub fn max_offdiagonal_z(cov: &crate::linalg::SymMatrix<f64>, basis: &[Vec<f64>], n: usize) -> Option<f64> {
    let e = in_basis(cov, basis);
    let mut worst: Option<f64> = None;
    for r in 0..basis.len() {
        for s in (r + 1)..basis.len() {
            let se = (e.get(r, r) * e.get(s, s) / n as f64).sqrt();
            if se > 0.0 {
                let z = e.get(r, s).abs() / se;
                worst = Some(worst.map_or(z, |w: f64| w.max(z)));
            }
        }
    }
    worst
}

fn summarize(manifest: &mut Vec<(String, String)>, prefix: &str, run: &TrainingRun<f64>) {
    manifest.push((format!("{prefix}final_loss"), run.final_loss.to_string()));
    manifest.push((format!("{prefix}probes"), run.records.len().to_string()));
}

/// Runs the experiment and writes its outputs to `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path, ema: Option<f64>) -> Result<ExperimentOutput> {
    let out = run_experiment(cfg)?;
    out.write(dir, ema)?;
    Ok(out)
}
