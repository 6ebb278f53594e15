//! Tabular Q-learning over add/remove actions on MSB fault sets.

use std::collections::{BTreeMap, HashMap};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidate::CandidateSet;
use crate::dut::{QuantizedModel, RepDataset};
use crate::error::{Error, Result};
use crate::fault::{FaultSet, FaultSite};
use crate::search::{Evaluator, SearchResult};

/// Which signal the Bellman update maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveSign {
    /// The update uses `-r`, the impact per flip, so that greedy actions seek damage.
    #[default]
    ImpactMaximizing,
    /// The update uses `r` as is.
    RewardLiteral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub e_max: usize,
    pub t_max: usize,
    pub alpha_rl: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub objective_sign: ObjectiveSign,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            e_max: 50,
            t_max: 20,
            alpha_rl: 0.1,
            gamma: 0.9,
            epsilon: 0.2,
            tau: 0.1875,
            objective_sign: ObjectiveSign::ImpactMaximizing,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.alpha_rl > 0.0 && self.alpha_rl <= 1.0) {
            return bad("alpha_rl must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.tau) {
            return bad("tau must be in [0, 1)");
        }
        Ok(())
    }

    /// Evaluations spent by one search: one per step.
    pub fn budget(&self) -> u64 {
        (self.e_max * self.t_max) as u64
    }
}

/// Toggles the MSB of one candidate parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Add(usize),
    Remove(usize),
}

impl Action {
    pub fn param(self) -> usize {
        match self {
            Action::Add(p) | Action::Remove(p) => p,
        }
    }

    pub fn apply(self, state: &FaultSet) -> FaultSet {
        let mut next = state.clone();
        match self {
            Action::Add(p) => next.insert(FaultSite::msb(p)),
            Action::Remove(p) => next.remove(&FaultSite::msb(p)),
        };
        next
    }
}

/// One action per candidate, in candidate order: remove if its MSB is already
/// in the state, add otherwise.
pub fn action_space(state: &FaultSet, cands: &CandidateSet) -> Vec<Action> {
    cands
        .indices
        .iter()
        .map(|&p| if state.contains(&FaultSite::msb(p)) { Action::Remove(p) } else { Action::Add(p) })
        .collect()
}

/// `Q + alpha (r + gamma max_next - Q)`.
pub fn bellman_update(q: f64, r: f64, gamma: f64, max_next: f64, alpha_rl: f64) -> f64 {
    q + alpha_rl * (r + gamma * max_next - q)
}

/// State-action values keyed by the full sorted fault set, so distinct sets
/// never collide. Absent entries read as 0. Actions are stored by candidate
/// position, which identifies them uniquely within a state.
#[derive(Debug, Clone, Default)]
pub struct QTable {
    entries: HashMap<FaultSet, BTreeMap<usize, f64>>,
}

impl QTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, state: &FaultSet, action: usize) -> f64 {
        self.entries.get(state).and_then(|row| row.get(&action)).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, state: &FaultSet, action: usize, value: f64) {
        self.entries.entry(state.clone()).or_default().insert(action, value);
    }

    /// `max_a Q(state, a)` over `n_actions` actions.
    pub fn max_value(&self, state: &FaultSet, n_actions: usize) -> f64 {
        match self.entries.get(state) {
            Some(row) if n_actions > 0 => (0..n_actions)
                .map(|a| row.get(&a).copied().unwrap_or(0.0))
                .fold(f64::NEG_INFINITY, f64::max),
            _ => 0.0,
        }
    }

    /// Positions of all actions attaining the maximum, ascending.
    pub fn argmax_all(&self, state: &FaultSet, n_actions: usize) -> Vec<usize> {
        let best = self.max_value(state, n_actions);
        (0..n_actions).filter(|&a| self.get(state, a) == best).collect()
    }

    pub fn n_states(&self) -> usize {
        self.entries.len()
    }

    pub fn n_entries(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    /// Rough resident size: keys, stored values and per-entry overhead.
    pub fn approx_bytes(&self) -> usize {
        let site = std::mem::size_of::<FaultSite>();
        self.entries
            .iter()
            .map(|(k, row)| 48 + k.len() * site + row.len() * (std::mem::size_of::<(usize, f64)>() + 16))
            .sum()
    }
}

/// Extra bookkeeping from a search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlStats {
    pub q_states: usize,
    pub q_entries: usize,
    pub q_bytes: usize,
}

/// Runs `e_max` episodes of `t_max` steps from the empty set. The model is
/// restored before returning.
pub fn run_search(
    model: &mut QuantizedModel,
    data: &RepDataset,
    cands: &CandidateSet,
    cfg: &RlConfig,
    seed: u64,
) -> Result<SearchResult> {
    run_search_with_stats(model, data, cands, cfg, seed).map(|(r, _)| r)
}

pub fn run_search_with_stats(
    model: &mut QuantizedModel,
    data: &RepDataset,
    cands: &CandidateSet,
    cfg: &RlConfig,
    seed: u64,
) -> Result<(SearchResult, RlStats)> {
    if cands.indices.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    cfg.validate()?;
    if let Some(&p) = cands.indices.iter().find(|&&p| p >= model.n_params()) {
        return Err(Error::SiteOutOfRange { param_index: p, bit: crate::fault::MSB, n_params: model.n_params() });
    }
    let k = cands.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = QTable::new();
    let mut ev = Evaluator::new(model, data, cfg.budget(), cfg.tau);
    let mut episode_best = Vec::with_capacity(cfg.e_max);
    for _ in 0..cfg.e_max {
        let mut state = FaultSet::new();
        for _ in 0..cfg.t_max {
            let actions = action_space(&state, cands);
            let a = if rng.random::<f64>() < cfg.epsilon {
                rng.random_range(0..k)
            } else {
                *q.argmax_all(&state, k).choose(&mut rng).expect("k > 0")
            };
            let next = actions[a].apply(&state);
            let (_, r) = ev.eval(&next)?;
            let target = match cfg.objective_sign {
                ObjectiveSign::ImpactMaximizing => -r,
                ObjectiveSign::RewardLiteral => r,
            };
            let updated = bellman_update(q.get(&state, a), target, cfg.gamma, q.max_value(&next, k), cfg.alpha_rl);
            q.set(&state, a, updated);
            state = next;
        }
        episode_best.push(ev.tracker().best_reward().unwrap_or(0.0));
    }
    let stats = RlStats { q_states: q.n_states(), q_entries: q.n_entries(), q_bytes: q.approx_bytes() };
    let mut result = ev.finish("rift");
    result.episode_best = episode_best;
    Ok((result, stats))
}

/// First episode (1-based) whose best reward is within 1% of the final best.
pub fn convergence_episode(episode_best: &[f64]) -> Option<usize> {
    let last = *episode_best.last()?;
    let tol = 0.01 * last.abs();
    episode_best.iter().position(|&b| (b - last).abs() <= tol).map(|i| i + 1)
}

/// Predicted cost of a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    pub evaluations: u64,
    /// `|P_crit| * E_max * T_max`: action-value work per run, in units of `C_eval`.
    pub bound_terms: u64,
    pub bound: String,
}

pub fn complexity_estimate(cands: &CandidateSet, cfg: &RlConfig) -> ComplexityEstimate {
    ComplexityEstimate {
        evaluations: cfg.budget(),
        bound_terms: (cands.k() * cfg.e_max * cfg.t_max) as u64,
        bound: format!("O(|P_crit| * E_max * T_max * C_eval) = O({} * {} * {} * C_eval)", cands.k(), cfg.e_max, cfg.t_max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cands(n: usize) -> CandidateSet {
        CandidateSet::from_indices((0..n).map(|i| i * 3).collect(), 0.1).unwrap()
    }

    #[test]
    fn bellman_hand_case() {
        let q = bellman_update(0.0, -0.2, 0.9, -0.1, 0.1);
        assert!((q - -0.029).abs() < 1e-12, "{q}");
    }

    #[test]
    fn action_space_counts() {
        let c = cands(10);
        let empty = action_space(&FaultSet::new(), &c);
        assert_eq!(empty.len(), 10);
        assert!(empty.iter().all(|a| matches!(a, Action::Add(_))));
        let full = FaultSet::msb_of(c.indices.clone());
        assert!(action_space(&full, &c).iter().all(|a| matches!(a, Action::Remove(_))));
        let three = FaultSet::msb_of([0, 6, 27]);
        let acts = action_space(&three, &c);
        assert_eq!(acts.iter().filter(|a| matches!(a, Action::Remove(_))).count(), 3);
        assert_eq!(acts.iter().filter(|a| matches!(a, Action::Add(_))).count(), 7);
    }

    #[test]
    fn qtable_defaults_and_max() {
        let mut q = QTable::new();
        let s = FaultSet::msb_of([1]);
        assert_eq!(q.get(&s, 3), 0.0);
        q.set(&s, 3, -0.5);
        assert_eq!(q.max_value(&s, 4), 0.0);
        assert_eq!(q.argmax_all(&s, 4), vec![0, 1, 2]);
        q.set(&s, 1, 0.25);
        assert_eq!(q.argmax_all(&s, 4), vec![1]);
        assert_eq!(q.max_value(&s, 1), 0.0);
    }

    #[test]
    fn qtable_keys_do_not_collide() {
        let mut q = QTable::new();
        q.set(&FaultSet::msb_of([1, 23]), 0, 1.0);
        assert_eq!(q.get(&FaultSet::msb_of([12, 3]), 0), 0.0);
        assert_eq!(q.n_states(), 1);
    }

    #[test]
    fn convergence_episode_uses_one_percent_band() {
        assert_eq!(convergence_episode(&[-0.1, -0.5, -0.996, -1.0]), Some(3));
        assert_eq!(convergence_episode(&[]), None);
        assert_eq!(convergence_episode(&[0.0, 0.0]), Some(1));
    }

    #[test]
    fn complexity_is_budget_product() {
        let cfg = RlConfig::default();
        assert_eq!(complexity_estimate(&cands(5), &cfg).evaluations, 1000);
        let none = RlConfig { e_max: 0, ..cfg };
        assert_eq!(complexity_estimate(&cands(5), &none).evaluations, 0);
    }

    #[test]
    fn config_validation() {
        assert!(RlConfig::default().validate().is_ok());
        assert!(RlConfig { gamma: 1.0, ..RlConfig::default() }.validate().is_err());
        assert!(RlConfig { alpha_rl: 0.0, ..RlConfig::default() }.validate().is_err());
    }
}
