use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::arch::{ArchConfig, GroupRole};
use super::dataset::RepDataset;
use super::model::QuantizedModel;
use super::network;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Training always runs at least this many steps.
    pub min_steps: usize,
    pub max_steps: usize,
    pub check_every: usize,
    /// Clean accuracy of the quantized model on the representative set.
    pub target_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-3,
            batch_size: 64,
            min_steps: 200,
            max_steps: 3000,
            check_every: 50,
            target_accuracy: 0.90,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub clean_accuracy: f64,
    pub final_loss: f64,
}

/// He-style initialization: norms start at identity, linear maps at N(0, 1/fan_in).
pub fn init_weights(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w = Vec::with_capacity(arch.n_params());
    for t in arch.tensors() {
        match t.role {
            GroupRole::NormScale => w.extend(std::iter::repeat_n(1.0, t.len())),
            GroupRole::NormBias => w.extend(std::iter::repeat_n(0.0, t.len())),
            _ => {
                let std = 1.0 / (t.shape[0] as f64).sqrt();
                w.extend((0..t.len()).map(|_| std * rng.sample::<f64, _>(StandardNormal)));
            }
        }
    }
    w
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, w: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..w.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            w[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Trains float weights with Adam until the *quantized* model reaches the
/// target accuracy on `rep`. Deterministic given `seed`.
pub fn train(
    arch: &ArchConfig,
    cfg: &TrainConfig,
    train_set: &RepDataset,
    rep: &RepDataset,
    seed: u64,
) -> Result<(QuantizedModel, TrainReport)> {
    arch.validate()?;
    if cfg.batch_size == 0 || cfg.check_every == 0 {
        return Err(Error::InvalidArgument("batch_size and check_every must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a1a_0000_0000_0002);
    let mut w = init_weights(arch, &mut rng);
    let mut opt = Adam::new(w.len(), cfg.learning_rate);
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut best = 0.0f64;
    for step in 1..=cfg.max_steps {
        if cursor + cfg.batch_size > n {
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(n);
        let batch = train_set.select(&order[cursor..end]);
        cursor = end;
        let (l, g) = network::loss_and_gradient(arch, &w, &batch, 1.0);
        opt.step(&mut w, &g);

        if step % cfg.check_every == 0 && step >= cfg.min_steps {
            let model = QuantizedModel::from_flat(arch.clone(), seed, &w)?;
            let (acc, _) = network::accuracy_and_loss(arch, &model.dequantized(), rep);
            best = best.max(acc);
            log::debug!("train step {step}: loss {l:.4}, quantized rep accuracy {acc:.4}");
            if acc >= cfg.target_accuracy {
                return Ok((model, TrainReport { steps: step, clean_accuracy: acc, final_loss: l }));
            }
        }
    }
    Err(Error::TrainingFailed { target: cfg.target_accuracy, steps: cfg.max_steps, best })
}
