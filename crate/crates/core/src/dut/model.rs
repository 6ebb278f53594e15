use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::{ArchConfig, GroupRole, TensorSpec};
use crate::error::{Error, Result};

/// Largest magnitude representable after symmetric int8 quantization.
pub const QMAX: f64 = 127.0;

/// Per-tensor symmetric quantization scale: `max|w| / 127`, or 1 for an all-zero tensor.
pub fn symmetric_scale(weights: &[f64]) -> f64 {
    let max = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max > 0.0 {
        max / QMAX
    } else {
        1.0
    }
}

pub fn quantize_value(w: f64, scale: f64) -> i8 {
    (w / scale).clamp(-QMAX, QMAX).round() as i8
}

/// One weight tensor with its float shadow copy and int8 deployment copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: GroupRole,
    pub block: Option<usize>,
    pub slot: usize,
    pub shape: Vec<usize>,
    pub scale: f64,
    pub q_weights: Vec<i8>,
    pub float_weights: Vec<f64>,
}

impl ParamGroup {
    pub fn quantize(spec: &TensorSpec, float_weights: Vec<f64>) -> Result<Self> {
        if float_weights.len() != spec.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}: expected {} weights, got {}",
                spec.label(),
                spec.len(),
                float_weights.len()
            )));
        }
        let scale = symmetric_scale(&float_weights);
        let q_weights = float_weights.iter().map(|&w| quantize_value(w, scale)).collect();
        Ok(ParamGroup {
            name: spec.role,
            block: spec.block,
            slot: spec.slot,
            shape: spec.shape.clone(),
            scale,
            q_weights,
            float_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.q_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_weights.is_empty()
    }

    #[inline]
    pub fn dequantized(&self, offset: usize) -> f64 {
        f64::from(self.q_weights[offset]) * self.scale
    }

    pub fn spec(&self) -> TensorSpec {
        TensorSpec { role: self.name, block: self.block, slot: self.slot, shape: self.shape.clone() }
    }
}

/// Record of a fault set currently applied to a model.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AppliedFaults {
    pub(crate) sites: Vec<(usize, u8)>,
    pub(crate) originals: Vec<i8>,
}

/// The design-under-test: int8 weight tensors grouped by architectural role.
#[derive(Debug, Clone)]
pub struct QuantizedModel {
    arch: ArchConfig,
    seed: u64,
    groups: Vec<ParamGroup>,
    /// `offsets[g]` is the flat index of the first weight of group `g`.
    offsets: Vec<usize>,
    n_params: usize,
    pub(crate) applied: Vec<AppliedFaults>,
}

impl PartialEq for QuantizedModel {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.seed == other.seed && self.groups == other.groups
    }
}

impl QuantizedModel {
    /// Quantizes float tensors given in layout order.
    pub fn from_float(arch: ArchConfig, seed: u64, tensors: Vec<Vec<f64>>) -> Result<Self> {
        arch.validate()?;
        let specs = arch.tensors();
        if specs.len() != tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        let groups = specs
            .iter()
            .zip(tensors)
            .map(|(spec, w)| ParamGroup::quantize(spec, w))
            .collect::<Result<Vec<_>>>()?;
        Self::from_groups(arch, seed, groups)
    }

    /// Quantizes a flat float vector laid out as [`ArchConfig::tensors`].
    pub fn from_flat(arch: ArchConfig, seed: u64, flat: &[f64]) -> Result<Self> {
        arch.validate()?;
        if flat.len() != arch.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} weights, got {}",
                arch.n_params(),
                flat.len()
            )));
        }
        let mut tensors = Vec::new();
        let mut start = 0;
        for spec in arch.tensors() {
            tensors.push(flat[start..start + spec.len()].to_vec());
            start += spec.len();
        }
        Self::from_float(arch, seed, tensors)
    }

    fn from_groups(arch: ArchConfig, seed: u64, groups: Vec<ParamGroup>) -> Result<Self> {
        let specs = arch.tensors();
        if specs.len() != groups.len() {
            return Err(Error::ShapeMismatch("group count does not match architecture".into()));
        }
        let mut offsets = Vec::with_capacity(groups.len());
        let mut n = 0;
        for (spec, g) in specs.iter().zip(&groups) {
            if g.spec() != *spec || g.float_weights.len() != g.q_weights.len() || g.len() != spec.len() {
                return Err(Error::ShapeMismatch(format!("group {} does not match architecture", spec.label())));
            }
            if !(g.scale > 0.0) {
                return Err(Error::ShapeMismatch(format!("group {} has non-positive scale", spec.label())));
            }
            offsets.push(n);
            n += g.len();
        }
        Ok(QuantizedModel { arch, seed, groups, offsets, n_params: n, applied: Vec::new() })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub(crate) fn groups_mut(&mut self) -> &mut [ParamGroup] {
        &mut self.groups
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn group_offset(&self, group: usize) -> usize {
        self.offsets[group]
    }

    /// Maps a flat parameter index to `(group, offset within group)`.
    pub fn locate(&self, index: usize) -> Option<(usize, usize)> {
        if index >= self.n_params {
            return None;
        }
        let g = self.offsets.partition_point(|&start| start <= index) - 1;
        Some((g, index - self.offsets[g]))
    }

    /// Inverse of [`locate`](Self::locate).
    pub fn flat_index(&self, group: usize, offset: usize) -> Option<usize> {
        let g = self.groups.get(group)?;
        (offset < g.len()).then(|| self.offsets[group] + offset)
    }

    pub fn role_of(&self, index: usize) -> Option<GroupRole> {
        self.locate(index).map(|(g, _)| self.groups[g].name)
    }

    pub fn q_weight(&self, index: usize) -> i8 {
        let (g, o) = self.locate(index).expect("parameter index out of range");
        self.groups[g].q_weights[o]
    }

    /// Dequantized weights in flat order; this is what the forward pass consumes.
    pub fn dequantized(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params);
        for g in &self.groups {
            out.extend(g.q_weights.iter().map(|&q| f64::from(q) * g.scale));
        }
        out
    }

    /// Float shadow weights in flat order.
    pub fn float_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params);
        for g in &self.groups {
            out.extend_from_slice(&g.float_weights);
        }
        out
    }

    pub fn q_weights(&self) -> Vec<i8> {
        let mut out = Vec::with_capacity(self.n_params);
        for g in &self.groups {
            out.extend_from_slice(&g.q_weights);
        }
        out
    }

    /// Number of fault sets currently applied.
    pub fn applied_depth(&self) -> usize {
        self.applied.len()
    }

    /// Re-quantizes the dequantized weights, treating them as new float weights.
    pub fn requantized(&self) -> Result<Self> {
        let tensors = self
            .groups
            .iter()
            .map(|g| g.q_weights.iter().map(|&q| f64::from(q) * g.scale).collect())
            .collect();
        Self::from_float(self.arch.clone(), self.seed, tensors)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile { arch: self.arch.clone(), seed: self.seed, groups: self.groups.clone() };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::json_parse("model", &e))?;
        file.arch.validate()?;
        Self::from_groups(file.arch, file.seed, file.groups)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    arch: ArchConfig,
    seed: u64,
    groups: Vec<ParamGroup>,
}
