#![allow(dead_code)]

use rift_core::dut::{ArchConfig, QuantizedModel, RepDataset};
use rift_core::{FaultSet, FaultSite, GroupRole};

/// A 1000-parameter model (8000 fault sites) whose blocks are all zero, so the
/// residual stream is the input. Every input token has channel 0 set to one and
/// every label is class 0, which wins through a single classifier weight of
/// +127. Flipping that weight's MSB makes it -1 and drops accuracy to zero; no
/// other single flip changes a prediction.
pub struct Micro {
    pub model: QuantizedModel,
    pub data: RepDataset,
    pub gate: usize,
}

pub fn micro_dut() -> Micro {
    let arch = ArchConfig { n_blocks: 1, width: 10, n_heads: 2, ffn_hidden: 26, seq_len: 2, n_classes: 4, final_norm: false };
    assert_eq!(arch.n_params(), 1000);
    let mut flat = vec![0.0; arch.n_params()];
    let head = arch.n_params() - arch.width * arch.n_classes;
    // classifier is [width, n_classes]: channel 0, class 0
    let gate = head;
    flat[gate] = 1.0;
    let model = QuantizedModel::from_flat(arch.clone(), 0, &flat).unwrap();
    assert_eq!(model.role_of(gate), Some(GroupRole::Classifier));
    assert_eq!(model.q_weight(gate), 127);
    let n = 8;
    let mut inputs = vec![0.0; n * arch.input_dim()];
    for tok in 0..n * arch.seq_len {
        inputs[tok * arch.width] = 1.0;
    }
    let data = RepDataset::new(arch.input_dim(), inputs, vec![0; n], arch.n_classes).unwrap();
    Micro { model, data, gate }
}

pub fn critical_site(m: &Micro) -> FaultSite {
    FaultSite::msb(m.gate)
}

pub fn only(site: FaultSite) -> FaultSet {
    FaultSet::from_sites(vec![site])
}
