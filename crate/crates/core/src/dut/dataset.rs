use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::arch::ArchConfig;
use crate::error::{Error, Result};

/// Procedural Gaussian cluster-mixture task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_rep: usize,
    /// Standard deviation of the per-feature noise around each class mean.
    pub noise: f64,
    /// Relative class frequencies. `None` means balanced classes.
    pub class_weights: Option<Vec<f64>>,
    /// Leading channels of each token that carry the class means; `None` means all.
    pub signal_channels: Option<usize>,
    /// Standard deviation of the class-mean coordinates.
    pub mean_scale: f64,
    /// Constant value placed in the last channel of every token, mimicking the
    /// massive activations of large transformers. Zero disables it.
    pub massive_activation: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 2048,
            n_rep: 256,
            noise: 0.8,
            class_weights: Some((1..=8).map(f64::from).collect()),
            signal_channels: Some(2),
            mean_scale: 3.0,
            massive_activation: 40.0,
        }
    }
}

/// A labelled evaluation set. Inputs are stored row-major, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepDataset {
    dim: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl RepDataset {
    pub fn new(dim: usize, inputs: Vec<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if n_classes < 2 {
            return Err(Error::InvalidArgument("n_classes must be at least 2".into()));
        }
        if inputs.len() != dim * labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs for {} samples of dimension {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {n_classes} classes")));
        }
        Ok(RepDataset { dim, inputs, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Subset by sample indices, in the given order.
    pub fn select(&self, idx: &[usize]) -> RepDataset {
        let mut inputs = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        RepDataset { dim: self.dim, inputs, labels, n_classes: self.n_classes }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Training and representative splits drawn from the same mixture.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: RepDataset,
    pub rep: RepDataset,
}

/// Per-class sample counts proportional to `weights`, summing to `n`.
fn class_quota(n: usize, n_classes: usize, weights: Option<&[f64]>) -> Result<Vec<usize>> {
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != n_classes || w.iter().any(|&x| !(x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidArgument(
                    "class_weights must be nonnegative, one per class, with a positive sum".into(),
                ));
            }
            w.to_vec()
        }
        None => vec![1.0; n_classes],
    };
    let total: f64 = w.iter().sum();
    let mut counts: Vec<usize> = w.iter().map(|x| (n as f64 * x / total).floor() as usize).collect();
    // Largest-remainder fill, ties to the lowest class.
    let mut rem: Vec<(f64, usize)> = w
        .iter()
        .enumerate()
        .map(|(c, x)| (n as f64 * x / total - counts[c] as f64, c))
        .collect();
    rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut missing = n - counts.iter().sum::<usize>();
    for &(_, c) in rem.iter().cycle() {
        if missing == 0 {
            break;
        }
        counts[c] += 1;
        missing -= 1;
    }
    Ok(counts)
}

fn draw_split(
    means: &[Vec<f64>],
    counts: &[usize],
    cfg: &DatasetConfig,
    width: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RepDataset> {
    let n_classes = means.len();
    let dim = means[0].len();
    let mut labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c, k)).collect();
    // Fisher-Yates so that class order does not leak into minibatches.
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let mut inputs = Vec::with_capacity(labels.len() * dim);
    for &c in &labels {
        for (j, &m) in means[c].iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            if cfg.massive_activation != 0.0 && j % width == width - 1 {
                inputs.push(cfg.massive_activation);
            } else {
                inputs.push(m + cfg.noise * z);
            }
        }
    }
    RepDataset::new(dim, inputs, labels, n_classes)
}

/// Generates the task deterministically from `seed`.
pub fn generate_task(arch: &ArchConfig, cfg: &DatasetConfig, seed: u64) -> Result<TaskData> {
    arch.validate()?;
    if cfg.n_rep == 0 || cfg.n_train == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(cfg.noise >= 0.0) || !(cfg.mean_scale > 0.0) || !cfg.massive_activation.is_finite() {
        return Err(Error::InvalidArgument("noise must be nonnegative, mean_scale positive".into()));
    }
    let signal = cfg.signal_channels.unwrap_or(arch.width);
    if signal == 0 || signal > arch.width {
        return Err(Error::InvalidArgument(format!("signal_channels must be in 1..={}", arch.width)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a_0000_0001);
    let dim = arch.input_dim();
    let means: Vec<Vec<f64>> = (0..arch.n_classes)
        .map(|_| {
            (0..dim)
                .map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    if j % arch.width < signal { cfg.mean_scale * z } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let weights = cfg.class_weights.as_deref();
    let train = draw_split(&means, &class_quota(cfg.n_train, arch.n_classes, weights)?, cfg, arch.width, &mut rng)?;
    let rep = draw_split(&means, &class_quota(cfg.n_rep, arch.n_classes, weights)?, cfg, arch.width, &mut rng)?;
    Ok(TaskData { train, rep })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_quota_is_exact() {
        assert_eq!(class_quota(16, 8, None).unwrap(), vec![2; 8]);
        assert_eq!(class_quota(10, 4, None).unwrap(), vec![3, 3, 2, 2]);
    }

    #[test]
    fn weighted_quota_sums_to_n() {
        let q = class_quota(100, 3, Some(&[1.0, 2.0, 7.0])).unwrap();
        assert_eq!(q, vec![10, 20, 70]);
        assert!(class_quota(100, 3, Some(&[1.0, -1.0, 1.0])).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let arch = ArchConfig::default();
        let cfg = DatasetConfig { n_train: 64, n_rep: 32, ..DatasetConfig::default() };
        let a = generate_task(&arch, &cfg, 7).unwrap();
        let b = generate_task(&arch, &cfg, 7).unwrap();
        assert_eq!(a.rep, b.rep);
        assert_eq!(a.train, b.train);
        let c = generate_task(&arch, &cfg, 8).unwrap();
        assert_ne!(a.rep, c.rep);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(RepDataset::new(3, vec![], vec![], 2), Err(Error::EmptyDataset)));
    }

    #[test]
    fn labels_must_be_in_range() {
        assert!(RepDataset::new(1, vec![0.0], vec![2], 2).is_err());
    }
}
