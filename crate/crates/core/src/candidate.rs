//! Candidate pruning: the top-ρ slice of the sensitivity ranking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dut::{GroupRole, QuantizedModel};
use crate::error::{Error, Result};
use crate::sensitivity::SensitivityProfile;

/// Default selection rate: 0.1% of all parameters.
pub const DEFAULT_RHO: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Flat parameter indices, most sensitive first.
    pub indices: Vec<usize>,
    pub rho: f64,
}

impl CandidateSet {
    /// An explicit candidate list, e.g. a random draw for ablations.
    pub fn from_indices(indices: Vec<usize>, rho: f64) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("candidate indices must be distinct".into()));
        }
        Ok(CandidateSet { indices, rho })
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

/// `k = max(1, floor(rho * n))`.
pub fn candidate_count(n_params: usize, rho: f64) -> Result<usize> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho {rho} outside (0, 1]")));
    }
    Ok(((rho * n_params as f64).floor() as usize).clamp(1, n_params.max(1)))
}

pub fn select_candidates(profile: &SensitivityProfile, rho: f64) -> Result<CandidateSet> {
    let k = candidate_count(profile.n_params(), rho)?;
    if profile.n_params() == 0 {
        return Err(Error::EmptyCandidates);
    }
    Ok(CandidateSet { indices: profile.ranking[..k].to_vec(), rho })
}

/// Fraction of candidates falling in each parameter group. Every role is
/// present in the map; the values sum to 1.
pub fn group_concentration(cands: &CandidateSet, model: &QuantizedModel) -> Result<BTreeMap<GroupRole, f64>> {
    let mut counts: BTreeMap<GroupRole, usize> = GroupRole::ALL.iter().map(|&r| (r, 0)).collect();
    for &i in &cands.indices {
        let role = model.role_of(i).ok_or_else(|| Error::InvalidArgument(format!("candidate {i} out of range")))?;
        *counts.get_mut(&role).expect("all roles") += 1;
    }
    let k = cands.k().max(1) as f64;
    Ok(counts.into_iter().map(|(r, c)| (r, c as f64 / k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(n: usize) -> SensitivityProfile {
        SensitivityProfile::from_scores((0..n).map(|i| ((i * 7919) % 1009) as f64).collect(), 0.5, 0.0)
    }

    #[test]
    fn k_is_floored_with_minimum_one() {
        assert_eq!(candidate_count(1000, 0.001).unwrap(), 1);
        assert_eq!(candidate_count(1000, 0.0001).unwrap(), 1);
        assert_eq!(candidate_count(100_000, 0.001).unwrap(), 100);
        assert_eq!(candidate_count(50_304, 0.001).unwrap(), 50);
        assert!(candidate_count(10, 0.0).is_err());
        assert!(candidate_count(10, 1.5).is_err());
    }

    #[test]
    fn full_rate_selects_whole_ranking() {
        let p = profile(50);
        assert_eq!(select_candidates(&p, 1.0).unwrap().indices, p.ranking);
    }

    #[test]
    fn selection_matches_independent_sort() {
        let p = profile(100_000);
        let c = select_candidates(&p, 0.001).unwrap();
        let mut pairs: Vec<(f64, usize)> = p.scores.iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expect: Vec<usize> = pairs[..100].iter().map(|x| x.1).collect();
        assert_eq!(c.indices, expect);
        let min_in = c.indices.iter().map(|&i| p.scores[i]).fold(f64::INFINITY, f64::min);
        let max_out = pairs[100..].iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
        assert!(min_in >= max_out);
    }

    #[test]
    fn explicit_lists_are_validated() {
        assert!(CandidateSet::from_indices(vec![], 0.1).is_err());
        assert!(CandidateSet::from_indices(vec![1, 2, 1], 0.1).is_err());
        assert_eq!(CandidateSet::from_indices(vec![3, 1], 0.1).unwrap().k(), 2);
    }
}
