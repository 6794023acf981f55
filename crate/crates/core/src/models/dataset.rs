use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;
use crate::stream::{permutation, rng_for, standard_normal, Purpose};

/// Classification samples with one-hot targets and an optional IID split
/// across workers.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// `shards[i]` lists the sample indices owned by worker `i`.
    pub shards: Option<Vec<Vec<usize>>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Vec<Vec<T>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        check_dim(inputs.len(), labels.len())?;
        if let Some(first) = inputs.first() {
            for x in &inputs {
                check_dim(first.len(), x.len())?;
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside {classes} classes")));
        }
        Ok(Self { inputs, labels, classes, shards: None })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn one_hot(&self, index: usize) -> Vec<T> {
        let mut y = vec![T::zero(); self.classes];
        y[self.labels[index]] = T::one();
        y
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Adds `offset` to every input coordinate. A positive offset mimics
    /// nonnegative pixel data, whose large mean activation is what separates
    /// the leading Hessian eigenvalues of an MSE network.
    pub fn shifted(mut self, offset: T) -> Self {
        for x in self.inputs.iter_mut() {
            x.iter_mut().for_each(|v| *v += offset);
        }
        self
    }

    /// Average-pools square-patch blocks of `rows x cols` images; trailing
    /// rows/columns that do not fill a block are dropped.
    pub fn average_pool(&self, rows: usize, cols: usize, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("pool factor must be positive"));
        }
        if !self.is_empty() {
            check_dim(rows * cols, self.input_dim())?;
        }
        let (pr, pc) = (rows / factor, cols / factor);
        let inv = T::one() / T::from_usize_lossy(factor * factor);
        let inputs = self
            .inputs
            .iter()
            .map(|x| {
                let mut out = Vec::with_capacity(pr * pc);
                for br in 0..pr {
                    for bc in 0..pc {
                        let mut s = T::zero();
                        for r in 0..factor {
                            for c in 0..factor {
                                s += x[(br * factor + r) * cols + bc * factor + c];
                            }
                        }
                        out.push(s * inv);
                    }
                }
                out
            })
            .collect();
        Ok(Self { inputs, labels: self.labels.clone(), classes: self.classes, shards: self.shards.clone() })
    }
}

/// Gaussian clusters, one per class, with unit-normal centres and
/// isotropic spread. Sample `n` belongs to class `n mod classes`.
pub fn generate_blobs<T: Scalar>(
    classes: usize,
    dim: usize,
    n: usize,
    spread: T,
    seed: u64,
) -> Result<Dataset<T>> {
    if classes == 0 || n < classes {
        return Err(Error::invalid(format!("need n >= classes >= 1, got n={n}, classes={classes}")));
    }
    let mut rng = rng_for(seed, Purpose::Data, &[classes as u64, dim as u64]);
    let centers: Vec<Vec<T>> = (0..classes)
        .map(|_| (0..dim).map(|_| standard_normal(&mut rng)).collect())
        .collect();
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let x = centers[c]
            .iter()
            .map(|&m| {
                let z: T = standard_normal(&mut rng);
                m + spread * z
            })
            .collect();
        inputs.push(x);
        labels.push(c);
    }
    Dataset::new(inputs, labels, classes)
}

/// Random permutation of the samples cut into `workers` contiguous shards
/// whose sizes differ by at most one.
pub fn partition_iid<T: Scalar>(dataset: &Dataset<T>, workers: usize, seed: u64) -> Result<Dataset<T>> {
    if workers == 0 {
        return Err(Error::invalid("need at least one worker"));
    }
    let n = dataset.len();
    let mut rng = rng_for(seed, Purpose::Partition, &[n as u64, workers as u64]);
    let perm = permutation(&mut rng, n);
    let (base, extra) = (n / workers, n % workers);
    let mut shards = Vec::with_capacity(workers);
    let mut start = 0;
    for w in 0..workers {
        let len = base + usize::from(w < extra);
        shards.push(perm[start..start + len].to_vec());
        start += len;
    }
    let mut out = dataset.clone();
    out.shards = Some(shards);
    Ok(out)
}
