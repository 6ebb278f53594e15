use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architectural role of a weight tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRole {
    AttentionQ,
    AttentionK,
    AttentionV,
    AttentionO,
    FfnIn,
    FfnOut,
    NormScale,
    NormBias,
    Classifier,
}

impl GroupRole {
    pub const ALL: [GroupRole; 9] = [
        GroupRole::AttentionQ,
        GroupRole::AttentionK,
        GroupRole::AttentionV,
        GroupRole::AttentionO,
        GroupRole::FfnIn,
        GroupRole::FfnOut,
        GroupRole::NormScale,
        GroupRole::NormBias,
        GroupRole::Classifier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupRole::AttentionQ => "attention_q",
            GroupRole::AttentionK => "attention_k",
            GroupRole::AttentionV => "attention_v",
            GroupRole::AttentionO => "attention_o",
            GroupRole::FfnIn => "ffn_in",
            GroupRole::FfnOut => "ffn_out",
            GroupRole::NormScale => "norm_scale",
            GroupRole::NormBias => "norm_bias",
            GroupRole::Classifier => "classifier",
        }
    }

    pub fn parse(s: &str) -> Option<GroupRole> {
        GroupRole::ALL.into_iter().find(|r| r.as_str() == s)
    }

    pub fn is_attention(self) -> bool {
        matches!(
            self,
            GroupRole::AttentionQ | GroupRole::AttentionK | GroupRole::AttentionV | GroupRole::AttentionO
        )
    }

    pub fn is_norm(self) -> bool {
        matches!(self, GroupRole::NormScale | GroupRole::NormBias)
    }

    pub fn is_ffn(self) -> bool {
        matches!(self, GroupRole::FfnIn | GroupRole::FfnOut)
    }
}

impl fmt::Display for GroupRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Shape of the design-under-test.
///
/// Inputs are sequences of `seq_len` tokens of `width` features. Each block is
/// pre-norm multi-head self-attention followed by a pre-norm ReLU feed-forward
/// layer, both residual. An optional final norm, mean pooling over tokens and
/// a linear classifier produce the logits. Linear layers carry no bias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub n_blocks: usize,
    pub width: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub seq_len: usize,
    pub n_classes: usize,
    /// Normalize the residual stream before pooling.
    pub final_norm: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { n_blocks: 2, width: 64, n_heads: 4, ffn_hidden: 64, seq_len: 2, n_classes: 8, final_norm: false }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArchitecture(msg.to_string()));
        if self.width == 0 {
            return bad("width must be positive");
        }
        if self.seq_len == 0 {
            return bad("seq_len must be positive");
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.n_blocks > 0 {
            if self.n_heads == 0 || !self.width.is_multiple_of(self.n_heads) {
                return bad("width must be a positive multiple of n_heads");
            }
            if self.ffn_hidden == 0 {
                return bad("ffn_hidden must be positive");
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.n_heads.max(1)
    }

    pub fn input_dim(&self) -> usize {
        self.seq_len * self.width
    }

    /// Tensor layout in flat-index order.
    pub fn tensors(&self) -> Vec<TensorSpec> {
        let d = self.width;
        let f = self.ffn_hidden;
        let mut out = Vec::new();
        for b in 0..self.n_blocks {
            let block = Some(b);
            out.push(TensorSpec::new(GroupRole::NormScale, block, 0, vec![d]));
            out.push(TensorSpec::new(GroupRole::NormBias, block, 0, vec![d]));
            out.push(TensorSpec::new(GroupRole::AttentionQ, block, 0, vec![d, d]));
            out.push(TensorSpec::new(GroupRole::AttentionK, block, 0, vec![d, d]));
            out.push(TensorSpec::new(GroupRole::AttentionV, block, 0, vec![d, d]));
            out.push(TensorSpec::new(GroupRole::AttentionO, block, 0, vec![d, d]));
            out.push(TensorSpec::new(GroupRole::NormScale, block, 1, vec![d]));
            out.push(TensorSpec::new(GroupRole::NormBias, block, 1, vec![d]));
            out.push(TensorSpec::new(GroupRole::FfnIn, block, 0, vec![d, f]));
            out.push(TensorSpec::new(GroupRole::FfnOut, block, 0, vec![f, d]));
        }
        if self.final_norm {
            out.push(TensorSpec::new(GroupRole::NormScale, None, 0, vec![d]));
            out.push(TensorSpec::new(GroupRole::NormBias, None, 0, vec![d]));
        }
        out.push(TensorSpec::new(GroupRole::Classifier, None, 0, vec![d, self.n_classes]));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(TensorSpec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub role: GroupRole,
    /// Block index, `None` for the head (final norm and classifier).
    pub block: Option<usize>,
    /// Distinguishes the two norms inside a block.
    pub slot: usize,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    fn new(role: GroupRole, block: Option<usize>, slot: usize, shape: Vec<usize>) -> Self {
        TensorSpec { role, block, slot, shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self) -> String {
        match self.block {
            Some(b) if self.role.is_norm() => format!("block{b}.norm{}.{}", self.slot, self.role),
            Some(b) => format!("block{b}.{}", self.role),
            None => format!("head.{}", self.role),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_arch_has_about_fifty_thousand_params() {
        let arch = ArchConfig::default();
        arch.validate().unwrap();
        // 2 * (4*64*64 + 2*64*64 + 4*64) + 64*8
        assert_eq!(arch.n_params(), 2 * (16384 + 8192 + 256) + 512);
        let normed = ArchConfig { final_norm: true, ..arch };
        assert_eq!(normed.n_params(), arch.n_params() + 128);
    }

    #[test]
    fn zero_width_is_rejected() {
        let arch = ArchConfig { width: 0, ..ArchConfig::default() };
        let err = arch.validate().unwrap_err();
        assert!(err.to_string().contains("invalid architecture"));
    }

    #[test]
    fn heads_must_divide_width() {
        let arch = ArchConfig { n_heads: 5, ..ArchConfig::default() };
        assert!(arch.validate().is_err());
    }

    #[test]
    fn head_only_model_is_valid() {
        let arch = ArchConfig { n_blocks: 0, width: 250, n_heads: 0, ffn_hidden: 0, seq_len: 1, n_classes: 2, final_norm: true };
        arch.validate().unwrap();
        assert_eq!(arch.n_params(), 1000);
    }

    #[test]
    fn role_names_round_trip() {
        for role in GroupRole::ALL {
            assert_eq!(GroupRole::parse(role.as_str()), Some(role));
        }
    }
}
