//! Vulnerability profiling: hybrid gradient/magnitude scores and their ranking.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dut::{gradients, GroupRole, QuantizedModel, RepDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub scores: Vec<f64>,
    /// Parameter indices by descending score, ties by ascending index.
    pub ranking: Vec<usize>,
    pub alpha: f64,
    pub hotspot_beta: f64,
}

impl SensitivityProfile {
    pub fn from_scores(scores: Vec<f64>, alpha: f64, hotspot_beta: f64) -> Self {
        let ranking = rank_descending(&scores);
        SensitivityProfile { scores, ranking, alpha, hotspot_beta }
    }

    pub fn n_params(&self) -> usize {
        self.scores.len()
    }

    /// Rank position of every parameter (0 = most sensitive).
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.ranking.len()];
        for (pos, &i) in self.ranking.iter().enumerate() {
            r[i] = pos;
        }
        r
    }

    /// CSV with columns `param_index,group,score,rank`, one row per parameter in index order.
    pub fn write_csv<W: Write>(&self, model: &QuantizedModel, out: W) -> Result<()> {
        let ranks = self.ranks();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["param_index", "group", "score", "rank"])?;
        for (i, s) in self.scores.iter().enumerate() {
            let role = model.role_of(i).map(GroupRole::as_str).unwrap_or("?");
            w.write_record([i.to_string(), role.to_string(), format!("{s:e}"), ranks[i].to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Indices sorted by descending value; equal values keep ascending index order.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `S_i = alpha * |g_i| / ||g|| + (1 - alpha) * |w_i| / ||w||`.
///
/// A zero gradient vector contributes nothing.
pub fn hybrid_scores_from(weights: &[f64], grads: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if weights.len() != grads.len() {
        return Err(Error::ShapeMismatch("weights and gradients differ in length".into()));
    }
    let wn = l2(weights);
    if !(wn > 0.0) {
        return Err(Error::InvalidArgument("weight vector has zero norm".into()));
    }
    let gn = l2(grads);
    Ok(weights
        .iter()
        .zip(grads)
        .map(|(w, g)| {
            let grad_term = if gn > 0.0 { g.abs() / gn } else { 0.0 };
            alpha * grad_term + (1.0 - alpha) * (w.abs() / wn)
        })
        .collect())
}

/// Scores every parameter of `model` from its float shadow weights and
/// straight-through gradients on `data`.
pub fn hybrid_scores(model: &QuantizedModel, data: &RepDataset, alpha: f64) -> Result<SensitivityProfile> {
    let weights = model.float_weights();
    let grads = if alpha > 0.0 { gradients(model, data)? } else { vec![0.0; weights.len()] };
    let scores = hybrid_scores_from(&weights, &grads, alpha)?;
    Ok(SensitivityProfile::from_scores(scores, alpha, 0.0))
}

/// Relative memory traffic per parameter group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HotspotMap {
    access_weight: BTreeMap<GroupRole, f64>,
}

impl HotspotMap {
    /// Normalizes raw traffic figures so the busiest group has weight 1.
    pub fn from_traffic(traffic: impl IntoIterator<Item = (GroupRole, f64)>) -> Result<Self> {
        let raw: BTreeMap<GroupRole, f64> = traffic.into_iter().collect();
        if raw.values().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidArgument("hotspot traffic must be nonnegative".into()));
        }
        let max = raw.values().copied().fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(Error::InvalidArgument("hotspot map needs at least one positive entry".into()));
        }
        Ok(HotspotMap { access_weight: raw.into_iter().map(|(k, v)| (k, v / max)).collect() })
    }

    pub fn uniform() -> Self {
        Self::from_traffic(GroupRole::ALL.map(|r| (r, 1.0))).expect("positive")
    }

    /// Groups absent from the map have weight 0.
    pub fn weight(&self, role: GroupRole) -> f64 {
        self.access_weight.get(&role).copied().unwrap_or(0.0)
    }
}

/// `S'_i = S_i * (1 + beta * h(group(i)))`, re-ranked. `beta = 0` is the identity.
pub fn apply_hotspot_weighting(
    profile: &SensitivityProfile,
    model: &QuantizedModel,
    map: &HotspotMap,
    beta: f64,
) -> Result<SensitivityProfile> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("hotspot beta {beta} must be nonnegative")));
    }
    if profile.n_params() != model.n_params() {
        return Err(Error::ShapeMismatch("profile does not match model".into()));
    }
    if beta == 0.0 {
        return Ok(SensitivityProfile { hotspot_beta: 0.0, ..profile.clone() });
    }
    let mut scores = profile.scores.clone();
    for (g, group) in model.groups().iter().enumerate() {
        let factor = 1.0 + beta * map.weight(group.name);
        let start = model.group_offset(g);
        for s in &mut scores[start..start + group.len()] {
            *s *= factor;
        }
    }
    Ok(SensitivityProfile::from_scores(scores, profile.alpha, beta))
}
