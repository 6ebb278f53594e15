//! The design-under-test: a small int8-quantized attention classifier.

mod arch;
mod dataset;
pub(crate) mod model;
pub mod network;
mod train;

pub use arch::{ArchConfig, GroupRole, TensorSpec};
pub use dataset::{generate_task, DatasetConfig, RepDataset, TaskData};
pub use model::{quantize_value, symmetric_scale, ParamGroup, QuantizedModel, QMAX};
pub use train::{init_weights, train, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything needed to rebuild a DUT from a seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DutConfig {
    pub arch: ArchConfig,
    pub data: DatasetConfig,
    pub train: TrainConfig,
}

/// A trained, quantized model together with its task data.
#[derive(Debug, Clone)]
pub struct Dut {
    pub model: QuantizedModel,
    pub data: TaskData,
    pub report: TrainReport,
}

impl Dut {
    pub fn rep(&self) -> &RepDataset {
        &self.data.rep
    }
}

/// Generates the task, trains until the quantized model is accurate enough, and quantizes.
pub fn build_dut(cfg: &DutConfig, seed: u64) -> Result<Dut> {
    cfg.arch.validate()?;
    let data = generate_task(&cfg.arch, &cfg.data, seed)?;
    let (model, report) = train(&cfg.arch, &cfg.train, &data.train, &data.rep, seed)?;
    Ok(Dut { model, data, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub loss: f64,
    pub n_evaluations_counter_delta: u64,
}

/// Accumulates the number of DUT evaluations spent, the common cost unit of every method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounter {
    count: u64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, result: &EvalResult) {
        self.count += result.n_evaluations_counter_delta;
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

fn check_compatible(model: &QuantizedModel, data: &RepDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let arch = model.arch();
    if data.dim() != arch.input_dim() || data.n_classes() != arch.n_classes {
        return Err(Error::ShapeMismatch(format!(
            "dataset (dim {}, {} classes) does not fit model (dim {}, {} classes)",
            data.dim(),
            data.n_classes(),
            arch.input_dim(),
            arch.n_classes
        )));
    }
    Ok(())
}

thread_local! {
    static THREAD_EVALUATIONS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Evaluations performed on the calling thread since it started.
pub fn thread_evaluations() -> u64 {
    THREAD_EVALUATIONS.with(|c| c.get())
}

/// Accuracy and mean cross-entropy of the model's current int8 weights.
pub fn evaluate(model: &QuantizedModel, data: &RepDataset) -> Result<EvalResult> {
    check_compatible(model, data)?;
    let (accuracy, loss) = network::accuracy_and_loss(model.arch(), &model.dequantized(), data);
    THREAD_EVALUATIONS.with(|c| c.set(c.get() + 1));
    Ok(EvalResult { accuracy, loss, n_evaluations_counter_delta: 1 })
}

/// d(mean cross-entropy)/d(weight) for every parameter, straight-through the quantizer.
pub fn gradients(model: &QuantizedModel, data: &RepDataset) -> Result<Vec<f64>> {
    check_compatible(model, data)?;
    Ok(network::loss_and_gradient(model.arch(), &model.dequantized(), data, 1.0).1)
}
