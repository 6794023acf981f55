use super::*;
use crate::linalg::vector::{dot, norm, sub};
use crate::stream::{gaussian_vec, rng_for, Purpose, StreamKey};

fn quad(d: usize, kappa: f64, gamma: f64, seed: u64) -> QuadraticModel<f64> {
    QuadraticModel::new(log_spaced(0.05, 1.0, d), kappa, gamma, seed).unwrap()
}

fn small_mlp(n: usize, workers: usize) -> MlpModel<f64> {
    let data = generate_blobs(3, 5, n, 0.5, 4).unwrap();
    let data = partition_iid(&data, workers, 1).unwrap();
    MlpModel::new(vec![5, 6, 4, 3], data, MseReduction::Mean).unwrap()
}

fn random_vec(d: usize, seed: u64) -> Vec<f64> {
    gaussian_vec(&mut rng_for(seed, Purpose::Data, &[99]), d)
}

/// Directional derivative by central differences of the loss.
fn fd_directional<M: LossModel<f64>>(m: &M, theta: &[f64], v: &[f64], h: f64) -> f64 {
    let p: Vec<f64> = theta.iter().zip(v).map(|(t, x)| t + h * x).collect();
    let q: Vec<f64> = theta.iter().zip(v).map(|(t, x)| t - h * x).collect();
    (m.loss(&p).unwrap() - m.loss(&q).unwrap()) / (2.0 * h)
}

#[test]
fn quadratic_gradient_vanishes_at_minimizer() {
    let m = quad(6, 0.0, 2.0, 1);
    let g = m.full_gradient(m.minimizer()).unwrap();
    assert!(g.iter().all(|&x| x == 0.0));
}

#[test]
fn quadratic_diagonal_gradient() {
    let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let m = QuadraticModel::with_basis(vec![4.0, 1.0], id, vec![0.0, 0.0], 0.0, 2.0).unwrap();
    assert_eq!(m.full_gradient(&[1.0, 1.0]).unwrap(), vec![4.0, 1.0]);
}

#[test]
fn quadratic_gradient_matches_finite_differences() {
    let m = quad(10, 0.0, 2.0, 3);
    let theta = m.initial_params(5);
    let g = m.full_gradient(&theta).unwrap();
    for i in 0..10 {
        let mut e = vec![0.0; 10];
        e[i] = 1.0;
        let fd = fd_directional(&m, &theta, &e, 1e-5);
        assert!((fd - g[i]).abs() <= 1e-7, "coordinate {i}: {fd} vs {}", g[i]);
    }
}

#[test]
fn quadratic_rejects_bad_construction() {
    assert!(QuadraticModel::<f64>::new(vec![0.5, 1.0], 1.0, 2.0, 0).is_err());
    assert!(QuadraticModel::<f64>::new(vec![1.0, -0.5], 1.0, 2.0, 0).is_err());
    assert!(QuadraticModel::<f64>::new(vec![], 1.0, 2.0, 0).is_err());
}

#[test]
fn quadratic_noiseless_stochastic_equals_full() {
    let m = quad(8, 0.0, 2.0, 2);
    let theta = m.initial_params(1);
    let key = StreamKey::new(4, 0, 1, 2, 5);
    assert_eq!(m.stochastic_gradient(&theta, &key, 50).unwrap(), m.full_gradient(&theta).unwrap());
}

#[test]
fn quadratic_noise_mean_and_directional_variance() {
    let (d, n) = (6, 100_000);
    let m = QuadraticModel::new(log_spaced(0.2, 1.0, d), 0.3, 1.5, 9).unwrap();
    let theta = m.initial_params(2);
    let full = m.full_gradient(&theta).unwrap();
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for i in 0..n {
        let g = m.stochastic_gradient(&theta, &StreamKey::new(11, i, 0, 0, 1), 0).unwrap();
        let eps = sub(&g, &full);
        for (a, x) in mean.iter_mut().zip(&g) {
            *a += x / n as f64;
        }
        for (r, u) in m.eigenbasis().iter().enumerate() {
            sq[r] += dot(&eps, u).powi(2) / n as f64;
        }
    }
    let sigma_max = m.noise_variances().iter().cloned().fold(0.0, f64::max).sqrt();
    for (a, f) in mean.iter().zip(&full) {
        assert!((a - f).abs() <= 3.0 * sigma_max / (n as f64).sqrt());
    }
    for (emp, want) in sq.iter().zip(m.noise_variances()) {
        assert!((emp - want).abs() <= 0.05 * want, "{emp} vs {want}");
    }
}

#[test]
fn quadratic_exact_eigenpairs_are_the_constructor_spectrum() {
    let eigs = log_spaced(0.05, 1.0, 7);
    let m = QuadraticModel::new(eigs.clone(), 1e-3, 2.0, 4).unwrap();
    let pairs = m.exact_hessian_eigenpairs().unwrap();
    assert_eq!(pairs.values, eigs);
    for (l, u) in pairs.values.iter().zip(&pairs.vectors) {
        let hu = m.hvp(&m.initial_params(0), u).unwrap();
        assert!(norm(&sub(&hu, &u.iter().map(|x| l * x).collect::<Vec<_>>())) < 1e-12);
    }
}

#[test]
fn log_spaced_endpoints() {
    let v: Vec<f64> = log_spaced(0.05, 1.0, 16);
    assert_eq!(v.len(), 16);
    assert!((v[0] - 1.0).abs() < 1e-15 && (v[15] - 0.05).abs() < 1e-15);
    assert!((v[0] / v[1] - v[7] / v[8]).abs() < 1e-12);
}

#[test]
fn fd_hvp_on_quadratic_is_exact() {
    let m = quad(12, 0.0, 2.0, 6);
    let theta = m.initial_params(3);
    let v = random_vec(12, 1);
    let fd = finite_difference_hvp(&m, &theta, &v, default_fd_step(&theta)).unwrap();
    let exact = m.hessian().matvec(&v);
    assert!(norm(&sub(&fd, &exact)) <= 1e-9 * norm(&exact));
}

#[test]
fn mlp_zero_network_bias_gradient() {
    // Zero inputs and zero weights: the output equals the output bias.
    let data = Dataset::new(vec![vec![0.0; 2]], vec![1], 3).unwrap();
    let m = MlpModel::new(vec![2, 4, 3], data, MseReduction::Mean).unwrap();
    let mut theta = vec![0.0; m.dim()];
    let out_bias = m.dim() - 3;
    theta[out_bias..].copy_from_slice(&[0.5, -0.25, 1.0]);
    let (loss, grad) = m.loss_grad(&theta, &[0]).unwrap();
    let outputs = [0.5, -0.25, 1.0];
    let targets = [0.0, 1.0, 0.0];
    let want_loss: f64 = outputs.iter().zip(&targets).map(|(o, y)| (o - y) * (o - y)).sum::<f64>() / 3.0;
    assert!((loss - want_loss).abs() < 1e-15);
    for k in 0..3 {
        let want = 2.0 * (outputs[k] - targets[k]) / 3.0;
        assert!((grad[out_bias + k] - want).abs() < 1e-15);
    }
    assert_eq!(m.forward(&theta, &[0.0, 0.0]).unwrap(), outputs.to_vec());
}

#[test]
fn mlp_sum_reduction_scales_by_classes() {
    let data = generate_blobs::<f64>(3, 5, 12, 0.5, 4).unwrap();
    let mean = MlpModel::new(vec![5, 4, 3], data.clone(), MseReduction::Mean).unwrap();
    let sum = MlpModel::new(vec![5, 4, 3], data, MseReduction::Sum).unwrap();
    let theta = mean.initial_params(1);
    let (lm, gm) = mean.loss_grad(&theta, &[0, 1, 2]).unwrap();
    let (ls, gs) = sum.loss_grad(&theta, &[0, 1, 2]).unwrap();
    assert!((ls - 3.0 * lm).abs() < 1e-13);
    assert!(gm.iter().zip(&gs).all(|(a, b)| (3.0 * a - b).abs() < 1e-13));
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let m = small_mlp(30, 1);
    let theta = m.initial_params(8);
    for (s, batch) in [vec![7usize], (0..30).collect::<Vec<_>>()].iter().enumerate() {
        let g = m.loss_grad(&theta, batch).unwrap().1;
        let view = |t: &[f64]| m.loss_grad(t, batch).unwrap().0;
        for probe in 0..5 {
            let v = random_vec(m.dim(), 100 + probe + 10 * s as u64);
            let h = 1e-5;
            let p: Vec<f64> = theta.iter().zip(&v).map(|(t, x)| t + h * x).collect();
            let q: Vec<f64> = theta.iter().zip(&v).map(|(t, x)| t - h * x).collect();
            let fd = (view(&p) - view(&q)) / (2.0 * h);
            let an = dot(&g, &v);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }
}

#[test]
fn mlp_duplicate_batch_and_order_invariance() {
    let m = small_mlp(40, 1);
    let theta = m.initial_params(2);
    let one = m.loss_grad(&theta, &[5]).unwrap();
    let two = m.loss_grad(&theta, &[5, 5]).unwrap();
    assert!((one.0 - two.0).abs() < 1e-15);
    assert!(one.1.iter().zip(&two.1).all(|(a, b)| (a - b).abs() < 1e-15));

    let mut shuffled: Vec<usize> = (0..40).rev().collect();
    shuffled.swap(3, 17);
    assert_eq!(m.loss_grad(&theta, &shuffled).unwrap().1, m.full_gradient(&theta).unwrap());
}

#[test]
fn mlp_rejects_empty_batch_and_non_finite() {
    let m = small_mlp(10, 1);
    let theta = m.initial_params(2);
    assert!(m.loss_grad(&theta, &[]).is_err());
    let mut bad = theta.clone();
    bad[0] = f64::NAN;
    assert!(matches!(m.loss_grad(&bad, &[0, 1]), Err(crate::Error::NonFinite { .. })));
}

#[test]
fn mlp_hvp_linear_and_symmetric() {
    let m = small_mlp(30, 1);
    let theta = m.initial_params(3);
    let v = random_vec(m.dim(), 1);
    let w = random_vec(m.dim(), 2);
    let hv = m.hvp(&theta, &v).unwrap();
    let h2v = m.hvp(&theta, &v.iter().map(|x| 2.0 * x).collect::<Vec<_>>()).unwrap();
    assert!(norm(&sub(&h2v, &hv.iter().map(|x| 2.0 * x).collect::<Vec<_>>())) <= 1e-6 * norm(&h2v));
    let hw = m.hvp(&theta, &w).unwrap();
    let (a, b) = (dot(&hv, &w), dot(&hw, &v));
    assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()));

    let sum: Vec<f64> = v.iter().zip(&w).map(|(x, y)| 0.3 * x - 1.7 * y).collect();
    let hs = m.hvp(&theta, &sum).unwrap();
    let comb: Vec<f64> = hv.iter().zip(&hw).map(|(x, y)| 0.3 * x - 1.7 * y).collect();
    assert!(norm(&sub(&hs, &comb)) <= 1e-5 * norm(&comb));

    let batch_hv = m.batch_hvp(&theta, &v, &(0..30).collect::<Vec<_>>(), default_fd_step(&theta)).unwrap();
    assert_eq!(batch_hv, hv);
}

#[test]
fn mlp_minibatches_walk_epochs_without_replacement() {
    let m = small_mlp(40, 4);
    let shard = m.dataset().shards.as_ref().unwrap()[2].clone();
    let mut seen = Vec::new();
    for step in 0..5 {
        let key = StreamKey::new(3, step, 2, 0, 1);
        let b = m.minibatch(&key, 2).unwrap();
        assert_eq!(b.len(), 2);
        seen.extend(b);
    }
    seen.sort_unstable();
    let mut want = shard;
    want.sort_unstable();
    assert_eq!(seen, want);
    assert!(m.minibatch(&StreamKey::new(3, 0, 4, 0, 1), 2).is_err());
}

#[test]
fn mlp_stochastic_gradient_is_unbiased() {
    let workers = 4;
    let m = small_mlp(40, workers);
    let theta = m.initial_params(6);
    let full = m.full_gradient(&theta).unwrap();
    let n = 10_000;
    let d = m.dim();
    let mut sum = vec![0.0; d];
    let mut sumsq = vec![0.0; d];
    for i in 0..n {
        let key = StreamKey::new(5, i / workers, i % workers, 0, 1);
        let g = m.stochastic_gradient(&theta, &key, 5).unwrap();
        for j in 0..d {
            sum[j] += g[j];
            sumsq[j] += g[j] * g[j];
        }
    }
    for j in 0..d {
        let mean = sum[j] / n as f64;
        let var = (sumsq[j] / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - full[j]).abs() <= 4.0 * se + 1e-12, "coord {j}");
    }
}

#[test]
fn blobs_examples() {
    let d = generate_blobs::<f64>(2, 3, 10, 0.0, 1).unwrap();
    for i in 0..10 {
        assert_eq!(d.inputs[i], d.inputs[i % 2]);
    }
    assert_eq!(generate_blobs::<f64>(4, 3, 20, 1.0, 9).unwrap(), generate_blobs(4, 3, 20, 1.0, 9).unwrap());
    let big = generate_blobs::<f64>(10, 64, 1000, 1.0, 2).unwrap();
    assert_eq!(big.class_counts(), vec![100; 10]);
    assert!(generate_blobs::<f64>(5, 2, 3, 1.0, 0).is_err());
}

#[test]
fn partition_examples() {
    let d = generate_blobs::<f64>(2, 2, 8, 1.0, 1).unwrap();
    let one = partition_iid(&d, 1, 3).unwrap();
    let mut s = one.shards.unwrap()[0].clone();
    s.sort_unstable();
    assert_eq!(s, (0..8).collect::<Vec<_>>());

    let four = partition_iid(&d, 4, 3).unwrap();
    let shards = four.shards.unwrap();
    assert_eq!(shards.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 2, 2]);

    let d = generate_blobs::<f64>(3, 2, 23, 1.0, 1).unwrap();
    let shards = partition_iid(&d, 5, 7).unwrap().shards.unwrap();
    let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    let mut all: Vec<usize> = shards.concat();
    all.sort_unstable();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
    assert_eq!(partition_iid(&d, 5, 7).unwrap(), partition_iid(&d, 5, 7).unwrap());
    assert!(partition_iid(&d, 0, 7).is_err());
}

fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    for x in [n, rows, cols] {
        b.extend_from_slice(&x.to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

#[test]
fn idx_fixture_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.idx");
    let lab = dir.path().join("lab.idx");
    std::fs::write(&img, idx_images(2, 2, 2, &[0, 255, 51, 102, 255, 0, 0, 0])).unwrap();
    std::fs::write(&lab, idx_labels(&[3, 7])).unwrap();
    let d: Dataset<f64> = load_idx(&img, &lab, 10).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.inputs[0], vec![0.0, 1.0, 0.2, 0.4]);
    assert_eq!(d.inputs[1], vec![1.0, 0.0, 0.0, 0.0]);
    assert_eq!(d.labels, vec![3, 7]);
    assert_eq!(d.classes, 10);
    assert_eq!(d.one_hot(0)[3], 1.0);

    let empty: Dataset<f64> = load_idx(&img, &lab, 0).unwrap();
    assert!(empty.is_empty());

    let err = load_idx::<f64>(&img, &img, 1).unwrap_err().to_string();
    assert!(err.contains("magic mismatch"), "{err}");
}

#[test]
fn idx_rejects_truncation_and_count_mismatch() {
    let imgs = idx_images(2, 2, 2, &[0, 1, 2, 3, 4, 5, 6]);
    let e = idx::dataset_from_idx::<f64>(&imgs, &idx_labels(&[1, 2]), 2).unwrap_err().to_string();
    assert!(e.contains("truncated images"), "{e}");
    let imgs = idx_images(2, 2, 2, &[0; 8]);
    let e = idx::dataset_from_idx::<f64>(&imgs, &idx_labels(&[1]), 2).unwrap_err().to_string();
    assert!(e.contains("count mismatch"), "{e}");
    let e = idx::dataset_from_idx::<f64>(&imgs[..6], &idx_labels(&[1]), 2).unwrap_err().to_string();
    assert!(e.contains("truncated"), "{e}");
}

#[test]
fn average_pool_blocks() {
    let d = Dataset::new(vec![(0..16).map(f64::from).collect()], vec![0], 1).unwrap();
    let p = d.average_pool(4, 4, 2).unwrap();
    assert_eq!(p.inputs[0], vec![2.5, 4.5, 10.5, 12.5]);
}
