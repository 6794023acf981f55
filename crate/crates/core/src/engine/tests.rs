use super::*;
use crate::linalg::vector::{dot, max_abs, norm};
use crate::models::{generate_blobs, log_spaced, partition_iid, MlpModel, MseReduction, QuadraticModel};
use crate::stream::StreamKey;

fn quad(kappa: f64) -> QuadraticModel<f64> {
    QuadraticModel::new(log_spaced(0.05, 1.0, 12), kappa, 2.0, 3).unwrap()
}

fn cfg(workers: usize, tau: usize, eta: f64) -> LocalSgdConfig<f64> {
    LocalSgdConfig { workers, tau, eta, rounds: 10, batch_size: 8, seed: 17, parallel: true }
}

fn mlp() -> MlpModel<f64> {
    let data = partition_iid(&generate_blobs(3, 6, 60, 0.7, 2).unwrap(), 4, 5).unwrap();
    MlpModel::new(vec![6, 8, 3], data, MseReduction::Mean).unwrap()
}

#[test]
fn config_validation() {
    assert!(cfg(1, 5, 0.1).validate().is_err());
    assert!(cfg(2, 0, 0.1).validate().is_err());
    assert!(cfg(2, 1, 0.0).validate().is_err());
    assert!(cfg(2, 1, 0.1).validate().is_ok());
    let d = LocalSgdConfig::<f64>::default();
    assert_eq!((d.workers, d.tau, d.batch_size), (4, 5, 50));
}

#[test]
fn noiseless_round_has_zero_gaps_and_gd_outer_step() {
    let m = quad(0.0);
    let c = cfg(4, 5, 0.5);
    let center = m.initial_params(1);
    let r = run_round(&m, &center, &c, 0).unwrap();
    assert!(r.gaps.iter().all(|g| g.iter().all(|&x| x == 0.0)));
    let mut gd = center.clone();
    for _ in 0..5 {
        let g = m.full_gradient(&gd).unwrap();
        crate::linalg::vector::axpy(-0.5, &g, &mut gd);
    }
    let expected: Vec<f64> = gd.iter().zip(&center).map(|(a, b)| a - b).collect();
    assert_eq!(r.outer_step, expected);
}

#[test]
fn single_step_gaps_are_centred_noise() {
    let m = quad(1e-2);
    let c = cfg(4, 1, 0.3);
    let center = m.initial_params(2);
    let r = run_round(&m, &center, &c, 7).unwrap();
    let noise: Vec<Vec<f64>> = (0..4).map(|i| m.noise(&StreamKey::new(c.seed, 7, i, 0, 1))).collect();
    for i in 0..4 {
        for j in 0..m.dim() {
            let mean: f64 = noise.iter().map(|n| n[j]).sum::<f64>() / 4.0;
            let want = -0.3 * (noise[i][j] - mean);
            assert!((r.gaps[i][j] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn two_worker_gaps_are_opposite() {
    let m = quad(1e-2);
    let r = run_round(&m, &m.initial_params(0), &cfg(2, 3, 0.4), 1).unwrap();
    for (a, b) in r.gaps[0].iter().zip(&r.gaps[1]) {
        assert!((a + b).abs() <= 1e-15 * (1.0 + a.abs()), "{a} {b}");
    }
}

#[test]
fn gaps_sum_to_zero() {
    let m = mlp();
    let c = cfg(4, 5, 0.2);
    let r = run_round(&m, &m.initial_params(3), &c, 2).unwrap();
    let max_gap = r.gaps.iter().map(|g| norm(g)).fold(0.0, f64::max);
    let sum: Vec<f64> = (0..m.dim()).map(|j| r.gaps.iter().map(|g| g[j]).sum()).collect();
    assert!(norm(&sum) <= 1e-10 * (1.0 + max_gap));
    let avg_check: Vec<f64> = (0..m.dim()).map(|j| r.worker_params.iter().map(|w| w[j]).sum::<f64>() / 4.0).collect();
    assert!(max_abs(&crate::linalg::vector::sub(&avg_check, &r.average)) < 1e-12);
}

/// Adds the same offset to every worker's gradient at a given (round, step).
struct CommonShift<'a> {
    inner: &'a QuadraticModel<f64>,
}

impl LossModel<f64> for CommonShift<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn loss(&self, t: &[f64]) -> Result<f64> {
        self.inner.loss(t)
    }
    fn full_gradient(&self, t: &[f64]) -> Result<Vec<f64>> {
        self.inner.full_gradient(t)
    }
    fn stochastic_gradient(&self, t: &[f64], key: &StreamKey, b: usize) -> Result<Vec<f64>> {
        let mut g = self.inner.stochastic_gradient(t, key, b)?;
        let shift = 0.25 * (key.step as f64 + 1.0);
        g.iter_mut().enumerate().for_each(|(j, x)| *x += shift * (j as f64 - 3.0));
        Ok(g)
    }
    fn hvp(&self, t: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.inner.hvp(t, v)
    }
    fn initial_params(&self, seed: u64) -> Vec<f64> {
        self.inner.initial_params(seed)
    }
}

#[test]
fn shared_gradient_offset_cancels_in_gaps() {
    let m = quad(1e-2);
    let shifted = CommonShift { inner: &m };
    let c = cfg(4, 4, 0.3);
    let center = m.initial_params(4);
    let a = run_round(&m, &center, &c, 3).unwrap();
    let b = run_round(&shifted, &center, &c, 3).unwrap();
    for (ga, gb) in a.gaps.iter().zip(&b.gaps) {
        for (x, y) in ga.iter().zip(gb) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn tau_one_standard_sync_is_minibatch_sgd() {
    let m = mlp();
    let c = cfg(4, 1, 0.2);
    let center = m.initial_params(1);
    let r = run_round(&m, &center, &c, 5).unwrap();
    let next = apply_sync(&center, &r.outer_step, &SyncPolicy::standard()).unwrap();
    let mut avg_grad = vec![0.0; m.dim()];
    for i in 0..4 {
        let g = m.stochastic_gradient(&center, &StreamKey::new(c.seed, 5, i, 0, 1), c.batch_size).unwrap();
        crate::linalg::vector::axpy(0.25, &g, &mut avg_grad);
    }
    for j in 0..m.dim() {
        assert!((next[j] - (center[j] - 0.2 * avg_grad[j])).abs() <= 1e-13);
    }
}

#[test]
fn parallel_and_sequential_rounds_agree() {
    let m = mlp();
    let mut c = cfg(4, 5, 0.2);
    let center = m.initial_params(1);
    let par = run_round(&m, &center, &c, 3).unwrap();
    c.parallel = false;
    let seq = run_round(&m, &center, &c, 3).unwrap();
    assert_eq!(par.worker_params, seq.worker_params);
    assert_eq!(par.gaps, seq.gaps);
}

#[test]
fn divergence_is_reported_with_worker_and_step() {
    let m = quad(0.0);
    let err = run_round(&m, &m.initial_params(0), &cfg(2, 2000, 1e150), 0).unwrap_err().to_string();
    assert!(err.contains("worker 0") && err.contains("local step"), "{err}");
}

fn basis_e0(d: usize) -> OrthonormalBasis<f64> {
    let mut e = vec![0.0; d];
    e[0] = 1.0;
    OrthonormalBasis::from_columns(d, vec![e]).unwrap()
}

#[test]
fn apply_sync_variants() {
    let center: Vec<f64> = vec![1.0, 2.0, 3.0];
    let p: Vec<f64> = vec![0.1, -0.7, 0.3];
    let q = crate::linalg::orthonormalize_buffer(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 2.0]], 1e-8).unwrap();

    let std = apply_sync(&center, &p, &SyncPolicy::standard()).unwrap();
    let identity = apply_sync(&center, &p, &SyncPolicy::filtered(q.clone(), 1.0, 1.0)).unwrap();
    assert_eq!(std, identity);

    let dom = apply_sync(&center, &p, &SyncPolicy::dom_projected(q.clone())).unwrap();
    let bulk = apply_sync(&center, &p, &SyncPolicy::bulk_projected(q.clone())).unwrap();
    for j in 0..3 {
        assert!(((dom[j] - center[j]) + (bulk[j] - center[j]) - p[j]).abs() < 1e-15);
    }

    assert_eq!(apply_sync(&center, &p, &SyncPolicy::filtered(q.clone(), 0.0, 0.0)).unwrap(), center);

    let e0 = basis_e0(3);
    let f = apply_sync(&center, &p, &SyncPolicy::filtered(e0, 0.5, 2.0)).unwrap();
    assert_eq!(f, vec![1.05, 2.0 - 1.4, 3.6]);

    let missing = SyncPolicy { basis: None, ..SyncPolicy::dom_projected(q) };
    assert!(matches!(apply_sync(&center, &p, &missing), Err(Error::MissingBasis(_))));
    assert!(apply_sync(&center, &p[..2], &SyncPolicy::standard()).is_err());
}

fn probe_cfg(capacities: Vec<usize>) -> ProbeConfig<f64> {
    let mut p = ProbeConfig::new(5, 3);
    p.capacities = capacities;
    p
}

#[test]
fn training_with_zero_rounds_is_empty() {
    let m = quad(1e-3);
    let mut c = cfg(4, 5, 0.5);
    c.rounds = 0;
    let start = m.initial_params(1);
    let run = run_training(&m, &c, &PolicySchedule::standard(), &probe_cfg(vec![]), TrainingStart { round: 0, params: start.clone() }).unwrap();
    assert!(run.records.is_empty());
    assert_eq!(run.final_params, start);
}

#[test]
fn training_probe_count_and_schema() {
    let m = quad(1e-3);
    let mut c = cfg(4, 5, 0.5);
    c.rounds = 2000;
    let probes = probe_cfg(vec![6, 12]);
    let run = run_training(&m, &c, &PolicySchedule::standard(), &probes, TrainingStart { round: 0, params: m.initial_params(0) }).unwrap();
    assert_eq!(run.records.len(), 400);
    let r = &run.records[10];
    assert_eq!(r.round, 50);
    assert_eq!(r.local_step, 250);
    assert_eq!(r.eigenvalues.len(), 8);
    assert_eq!(r.rho.len(), 2);
    assert_eq!(r.ranks, vec![6, 12]);
    assert!(r.chi.is_some());
    assert_eq!(run.records[0].gap_norm, None);
    assert_eq!(run.records[0].ranks, vec![0, 0]);
}

#[test]
fn training_is_deterministic_and_switches_policy() {
    let m = mlp();
    let mut c = cfg(4, 5, 0.3);
    c.rounds = 12;
    let mut probes = probe_cfg(vec![6]);
    probes.cadence = 2;
    probes.lanczos_iters = 20;
    let schedule = PolicySchedule {
        switch_round: 6,
        after: PolicyKind::DomProjected,
        basis: BasisSource::TrueDominant { refresh: 2 },
    };
    let go = || run_training(&m, &c, &schedule, &probes, TrainingStart { round: 0, params: m.initial_params(2) }).unwrap();
    let a = go();
    let b = go();
    assert_eq!(a.records, b.records);
    assert_eq!(a.final_params, b.final_params);
    let policies: Vec<&str> = a.records.iter().map(|r| r.policy).collect();
    assert_eq!(policies, vec!["standard", "standard", "standard", "dom_projected", "dom_projected", "dom_projected"]);
}

#[test]
fn gap_proxy_filter_with_unit_gains_matches_standard() {
    let m = quad(1e-3);
    let mut c = cfg(4, 5, 0.5);
    c.rounds = 15;
    let probes = ProbeConfig { cadence: 0, ..probe_cfg(vec![]) };
    let start = TrainingStart { round: 0, params: m.initial_params(0) };
    let base = run_training(&m, &c, &PolicySchedule::standard(), &probes, start.clone()).unwrap();
    let filt = PolicySchedule {
        switch_round: 0,
        after: PolicyKind::Filtered { dom_gain: 1.0, bulk_gain: 1.0 },
        basis: BasisSource::GapProxy { capacity: 6 },
    };
    let same = run_training(&m, &c, &filt, &probes, start.clone()).unwrap();
    assert_eq!(base.final_params, same.final_params);

    let frozen = PolicySchedule { after: PolicyKind::Filtered { dom_gain: 0.0, bulk_gain: 0.0 }, ..filt };
    let stuck = run_training(&m, &c, &frozen, &probes, start.clone()).unwrap();
    assert_eq!(stuck.final_params, start.params);
}

#[test]
fn continuation_from_checkpoint_matches_uninterrupted_run() {
    let m = quad(1e-3);
    let mut c = cfg(4, 5, 0.5);
    c.rounds = 10;
    let probes = ProbeConfig { cadence: 0, ..probe_cfg(vec![]) };
    let full = run_training(&m, &c, &PolicySchedule::standard(), &probes, TrainingStart { round: 0, params: m.initial_params(0) }).unwrap();
    c.rounds = 4;
    let head = run_training(&m, &c, &PolicySchedule::standard(), &probes, TrainingStart { round: 0, params: m.initial_params(0) }).unwrap();
    c.rounds = 10;
    let tail = run_training(&m, &c, &PolicySchedule::standard(), &probes, TrainingStart { round: 4, params: head.final_params }).unwrap();
    assert_eq!(full.final_params, tail.final_params);
}

#[test]
fn training_errors_carry_round() {
    let m = quad(0.0);
    let mut c = cfg(2, 1, 2.5);
    c.rounds = 5000;
    let probes = ProbeConfig { cadence: 0, ..probe_cfg(vec![]) };
    let err = run_training(&m, &c, &PolicySchedule::standard(), &probes, TrainingStart { round: 0, params: m.initial_params(0) }).unwrap_err();
    assert!(matches!(err, Error::AtRound { .. }), "{err}");
    let _ = dot(&[1.0], &[1.0]);
}
