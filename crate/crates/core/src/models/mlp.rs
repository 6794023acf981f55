use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::models::{default_fd_step, finite_difference_hvp, Dataset, LossModel};
use crate::scalar::Scalar;
use crate::stream::{permutation, rng_for, Purpose, StreamKey};

/// Samples per parallel work item. Fixed so that summation order, and hence
/// every output bit, is independent of the thread count.
const CHUNK: usize = 32;

/// How the squared error is reduced over output coordinates. Either way it is
/// averaged over the samples of a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MseReduction {
    /// `Σ_k (o_k − y_k)²`
    Sum,
    /// `Σ_k (o_k − y_k)² / classes`, the element-wise mean used by common
    /// deep-learning frameworks.
    #[default]
    Mean,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    weights: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Fully connected tanh network with a linear output layer, trained with MSE
/// against one-hot targets.
///
/// Parameters are laid out layer by layer as a row-major `fan_out x fan_in`
/// weight block followed by the bias.
#[derive(Clone, Debug)]
pub struct MlpModel<T> {
    widths: Vec<usize>,
    layers: Vec<Layer>,
    dim: usize,
    data: Dataset<T>,
    reduction: MseReduction,
    fd_step: Option<T>,
}

impl<T: Scalar> MlpModel<T> {
    /// `widths` runs from input size to class count, e.g. `[64, 32, 32, 10]`.
    pub fn new(widths: Vec<usize>, data: Dataset<T>, reduction: MseReduction) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("invalid layer widths {widths:?}")));
        }
        if !data.is_empty() {
            check_dim(widths[0], data.input_dim())?;
        }
        check_dim(*widths.last().unwrap(), data.classes)?;
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            layers.push(Layer { weights: offset, bias: offset + fan_in * fan_out, fan_in, fan_out });
            offset += fan_in * fan_out + fan_out;
        }
        Ok(Self { widths, layers, dim: offset, data, reduction, fd_step: None })
    }

    /// Fixes the finite-difference step used by `hvp` instead of `1e-4 (1 + ‖θ‖)`.
    pub fn with_fd_step(mut self, step: T) -> Self {
        self.fd_step = Some(step);
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn dataset(&self) -> &Dataset<T> {
        &self.data
    }

    pub fn reduction(&self) -> MseReduction {
        self.reduction
    }

    fn output_scale(&self) -> T {
        match self.reduction {
            MseReduction::Sum => T::one(),
            MseReduction::Mean => T::one() / T::from_usize_lossy(self.data.classes),
        }
    }

    pub fn forward(&self, theta: &[T], x: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim, theta.len())?;
        check_dim(self.widths[0], x.len())?;
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            a = self.layer_forward(theta, layer, &a, l < last);
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("mlp forward pass"));
        }
        Ok(a)
    }

    fn layer_forward(&self, theta: &[T], layer: &Layer, input: &[T], hidden: bool) -> Vec<T> {
        let w = &theta[layer.weights..layer.bias];
        let b = &theta[layer.bias..layer.bias + layer.fan_out];
        (0..layer.fan_out)
            .map(|o| {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                let z = row.iter().zip(input).fold(b[o], |acc, (&wi, &xi)| acc + wi * xi);
                if hidden { z.tanh() } else { z }
            })
            .collect()
    }

    /// Batch-averaged loss and exact backpropagated gradient.
    ///
    /// The batch is processed in sorted index order, so any permutation of
    /// the same multiset of samples gives a bit-identical result.
    pub fn loss_grad(&self, theta: &[T], batch: &[usize]) -> Result<(T, Vec<T>)> {
        check_dim(self.dim, theta.len())?;
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= self.data.len()) {
            return Err(Error::invalid(format!("sample index {bad} out of range")));
        }
        let mut sorted = batch.to_vec();
        sorted.sort_unstable();

        let partials: Vec<Result<(T, Vec<T>)>> = sorted
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grad = vec![T::zero(); self.dim];
                let loss = self.accumulate(theta, chunk, &mut grad)?;
                Ok((loss, grad))
            })
            .collect();

        let mut loss = T::zero();
        let mut grad = vec![T::zero(); self.dim];
        for part in partials {
            let (l, g) = part?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += *b;
            }
        }
        let factor = self.output_scale() / T::from_usize_lossy(batch.len());
        loss *= factor;
        for g in grad.iter_mut() {
            *g *= factor;
        }
        Ok((loss, grad))
    }

    /// Unscaled squared-error sum over `indices`; adds `Σ ∂/∂θ` into `grad`.
    fn accumulate(&self, theta: &[T], indices: &[usize], grad: &mut [T]) -> Result<T> {
        let two = T::lit(2.0);
        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<T>> = self.widths.iter().map(|&w| vec![T::zero(); w]).collect();
        let mut deltas: Vec<Vec<T>> = self.widths.iter().map(|&w| vec![T::zero(); w]).collect();
        let mut total = T::zero();

        for &n in indices {
            acts[0].copy_from_slice(&self.data.inputs[n]);
            for (l, layer) in self.layers.iter().enumerate() {
                let out = self.layer_forward(theta, layer, &acts[l], l < last);
                acts[l + 1].copy_from_slice(&out);
            }
            let output = &acts[self.layers.len()];
            if !output.iter().all(|v| v.is_finite()) {
                return Err(Error::non_finite(format!("mlp activations for sample {n}")));
            }
            let label = self.data.labels[n];
            let top = &mut deltas[self.layers.len()];
            for (k, (&o, d)) in output.iter().zip(top.iter_mut()).enumerate() {
                let y = if k == label { T::one() } else { T::zero() };
                let r = o - y;
                total += r * r;
                *d = two * r;
            }

            for (l, layer) in self.layers.iter().enumerate().rev() {
                let (lower, upper) = deltas.split_at_mut(l + 1);
                let delta = &upper[0];
                let input = &acts[l];
                let gw = &mut grad[layer.weights..layer.bias];
                for (o, &d) in delta.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    let row = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
                    for (g, &x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                for (g, &d) in grad[layer.bias..layer.bias + layer.fan_out].iter_mut().zip(delta) {
                    *g += d;
                }
                if l > 0 {
                    let prev = &mut lower[l];
                    prev.iter_mut().for_each(|p| *p = T::zero());
                    let w = &theta[layer.weights..layer.bias];
                    for (o, &d) in delta.iter().enumerate() {
                        let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                        for (p, &wi) in prev.iter_mut().zip(row) {
                            *p += wi * d;
                        }
                    }
                    for (p, &a) in prev.iter_mut().zip(&acts[l]) {
                        *p *= T::one() - a * a;
                    }
                }
            }
        }
        Ok(total)
    }

    /// Gradient-difference Hessian-vector product restricted to `batch`.
    pub fn batch_hvp(&self, theta: &[T], v: &[T], batch: &[usize], fd_step: T) -> Result<Vec<T>> {
        let sub = BatchView { model: self, batch };
        finite_difference_hvp(&sub, theta, v, fd_step)
    }

    /// The minibatch worker `key.worker` uses at `key.global_step`.
    ///
    /// Each worker walks through epochs of its own shard without replacement;
    /// the shard is reshuffled at every epoch from `(seed, worker, epoch)`.
    /// Samples left over after the last full batch of an epoch are skipped.
    pub fn minibatch(&self, key: &StreamKey, batch_size: usize) -> Result<Vec<usize>> {
        let worker = key.worker as usize;
        let shard: Vec<usize> = match &self.data.shards {
            Some(shards) => shards
                .get(worker)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("no shard for worker {worker} ({} shards)", shards.len())))?,
            None => (0..self.data.len()).collect(),
        };
        if shard.is_empty() {
            return Err(Error::invalid(format!("worker {worker} has an empty shard")));
        }
        let b = batch_size.clamp(1, shard.len());
        let per_epoch = (shard.len() / b) as u64;
        let epoch = key.global_step / per_epoch;
        let slot = (key.global_step % per_epoch) as usize;
        let mut rng = rng_for(key.seed, Purpose::Batch, &[key.worker, epoch]);
        let perm = permutation(&mut rng, shard.len());
        Ok(perm[slot * b..(slot + 1) * b].iter().map(|&p| shard[p]).collect())
    }

    fn all_indices(&self) -> Vec<usize> {
        (0..self.data.len()).collect()
    }
}

struct BatchView<'a, T> {
    model: &'a MlpModel<T>,
    batch: &'a [usize],
}

impl<T: Scalar> LossModel<T> for BatchView<'_, T> {
    fn dim(&self) -> usize {
        self.model.dim
    }
    fn loss(&self, theta: &[T]) -> Result<T> {
        Ok(self.model.loss_grad(theta, self.batch)?.0)
    }
    fn full_gradient(&self, theta: &[T]) -> Result<Vec<T>> {
        Ok(self.model.loss_grad(theta, self.batch)?.1)
    }
    fn stochastic_gradient(&self, theta: &[T], _key: &StreamKey, _batch_size: usize) -> Result<Vec<T>> {
        self.full_gradient(theta)
    }
    fn hvp(&self, theta: &[T], v: &[T]) -> Result<Vec<T>> {
        finite_difference_hvp(self, theta, v, default_fd_step(theta))
    }
    fn initial_params(&self, seed: u64) -> Vec<T> {
        self.model.initial_params(seed)
    }
}

impl<T: Scalar> LossModel<T> for MlpModel<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, theta: &[T]) -> Result<T> {
        Ok(self.loss_grad(theta, &self.all_indices())?.0)
    }

    fn full_gradient(&self, theta: &[T]) -> Result<Vec<T>> {
        Ok(self.loss_grad(theta, &self.all_indices())?.1)
    }

    fn stochastic_gradient(&self, theta: &[T], key: &StreamKey, batch_size: usize) -> Result<Vec<T>> {
        let batch = self.minibatch(key, batch_size)?;
        Ok(self.loss_grad(theta, &batch)?.1)
    }

    fn hvp(&self, theta: &[T], v: &[T]) -> Result<Vec<T>> {
        let step = self.fd_step.unwrap_or_else(|| default_fd_step(theta));
        finite_difference_hvp(self, theta, v, step)
    }

    fn accuracy(&self, theta: &[T]) -> Result<Option<T>> {
        if self.data.is_empty() {
            return Ok(None);
        }
        let correct = self
            .data
            .inputs
            .par_iter()
            .zip(&self.data.labels)
            .map(|(x, &label)| {
                let out = self.forward(theta, x)?;
                let argmax = out
                    .iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0;
                Ok(usize::from(argmax == label))
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum::<usize>();
        Ok(Some(T::from_usize_lossy(correct) / T::from_usize_lossy(self.data.len())))
    }

    /// Uniform `(-1/√fan_in, 1/√fan_in)` for weights and biases.
    fn initial_params(&self, seed: u64) -> Vec<T> {
        use rand::Rng;
        let mut rng = rng_for(seed, Purpose::Init, &[self.dim as u64]);
        let mut theta = vec![T::zero(); self.dim];
        for layer in &self.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let end = layer.bias + layer.fan_out;
            for t in &mut theta[layer.weights..end] {
                *t = T::lit(rng.random_range(-bound..bound));
            }
        }
        theta
    }
}
