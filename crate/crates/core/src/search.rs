//! Pieces shared by every fault-set search: the reward, best-set tracking under
//! the accuracy threshold, budgeted evaluation and the common result record.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dut::{evaluate, EvalCounter, QuantizedModel, RepDataset};
use crate::error::{Error, Result};
use crate::fault::{FaultSet, FaultSite};

/// `-(1 - acc) / max(1, |s|)`; always in `[-1, 0]`.
pub fn reward(accuracy: f64, set_size: usize) -> f64 {
    -(1.0 - accuracy) / set_size.max(1) as f64
}

/// One evaluated fault set.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub faults: FaultSet,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Best {
    satisfied: bool,
    reward: f64,
    faults: FaultSet,
    accuracy: f64,
}

impl Best {
    /// Satisfying sets first, then lower reward, then smaller, then lexicographic.
    fn better_than(&self, other: &Best) -> bool {
        let ord = other
            .satisfied
            .cmp(&self.satisfied)
            .then(self.reward.total_cmp(&other.reward))
            .then(self.faults.len().cmp(&other.faults.len()))
            .then(self.faults.cmp(&other.faults));
        ord == Ordering::Less
    }
}

/// Keeps the best set seen so far. Among sets with accuracy at most `tau`
/// the lowest reward wins, then the smaller set, then the lexicographically
/// smaller one; if nothing has met the threshold the same order applies to
/// everything seen.
#[derive(Debug, Clone)]
pub struct BestTracker {
    tau: f64,
    best: Option<Best>,
    first_satisfying: Option<u64>,
    seen: u64,
}

impl BestTracker {
    pub fn new(tau: f64) -> Self {
        BestTracker { tau, best: None, first_satisfying: None, seen: 0 }
    }

    /// Records one evaluation. Returns the reward of `faults`.
    pub fn offer(&mut self, faults: &FaultSet, accuracy: f64) -> f64 {
        self.seen += 1;
        let r = reward(accuracy, faults.len());
        let satisfied = accuracy <= self.tau;
        if satisfied && self.first_satisfying.is_none() {
            self.first_satisfying = Some(self.seen);
        }
        let cand = Best { satisfied, reward: r, faults: faults.clone(), accuracy };
        if self.best.as_ref().is_none_or(|b| cand.better_than(b)) {
            self.best = Some(cand);
        }
        r
    }

    pub fn best_reward(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.reward)
    }

    pub fn satisfied(&self) -> bool {
        self.best.as_ref().is_some_and(|b| b.satisfied)
    }

    pub fn first_satisfying(&self) -> Option<u64> {
        self.first_satisfying
    }
}

/// Applies, evaluates and reverts fault sets on a borrowed model, counting
/// evaluations and refusing to exceed the budget.
pub struct Evaluator<'a> {
    model: &'a mut QuantizedModel,
    data: &'a RepDataset,
    counter: EvalCounter,
    budget: u64,
    tracker: BestTracker,
    trace: Vec<TraceEntry>,
    rewards: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a mut QuantizedModel, data: &'a RepDataset, budget: u64, tau: f64) -> Self {
        Evaluator {
            model,
            data,
            counter: EvalCounter::new(),
            budget,
            tracker: BestTracker::new(tau),
            trace: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn remaining(&self) -> u64 {
        self.budget - self.counter.count()
    }

    pub fn used(&self) -> u64 {
        self.counter.count()
    }

    pub fn n_params(&self) -> usize {
        self.model.n_params()
    }

    pub fn model(&self) -> &QuantizedModel {
        self.model
    }

    /// Evaluates `faults`, returning `(accuracy, reward)`.
    pub fn eval(&mut self, faults: &FaultSet) -> Result<(f64, f64)> {
        if self.remaining() == 0 {
            return Err(Error::InvalidArgument("evaluation budget exhausted".into()));
        }
        self.model.apply_faults(faults)?;
        let res = evaluate(self.model, self.data);
        self.model.revert_faults(faults)?;
        let res = res?;
        self.counter.record(&res);
        let r = self.tracker.offer(faults, res.accuracy);
        self.trace.push(TraceEntry { faults: faults.clone(), accuracy: res.accuracy });
        self.rewards.push(r);
        Ok((res.accuracy, r))
    }

    pub fn tracker(&self) -> &BestTracker {
        &self.tracker
    }

    pub fn finish(self, method: &str) -> SearchResult {
        let best = self.tracker.best.clone();
        let distinct = self.trace.iter().map(|t| &t.faults).collect::<HashSet<_>>().len();
        let (f_crit, best_reward, final_accuracy, satisfied) = match best {
            Some(b) => (b.faults, b.reward, b.accuracy, b.satisfied),
            None => (FaultSet::new(), 0.0, f64::NAN, false),
        };
        SearchResult {
            method: method.to_string(),
            f_crit,
            satisfied,
            best_reward,
            final_accuracy,
            evaluations_used: self.counter.count(),
            first_satisfying_eval: self.tracker.first_satisfying,
            distinct_sets: distinct,
            reward_trace: self.rewards,
            episode_best: Vec::new(),
            trace: self.trace,
        }
    }
}

/// Outcome of one budgeted search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub method: String,
    /// Best set found; it meets the threshold iff `satisfied`.
    pub f_crit: FaultSet,
    pub satisfied: bool,
    pub best_reward: f64,
    pub final_accuracy: f64,
    pub evaluations_used: u64,
    /// 1-based index of the first evaluation at or below the threshold.
    pub first_satisfying_eval: Option<u64>,
    /// Number of distinct fault sets evaluated.
    pub distinct_sets: usize,
    pub reward_trace: Vec<f64>,
    /// Best reward after each episode (episodic methods only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub episode_best: Vec<f64>,
    #[serde(skip)]
    pub trace: Vec<TraceEntry>,
}

impl SearchResult {
    /// `|F_crit|` when the threshold was met, otherwise `censored`.
    pub fn effective_size(&self, censored: usize) -> usize {
        if self.satisfied {
            self.f_crit.len()
        } else {
            censored
        }
    }

    /// Evaluations until the threshold was first met, otherwise `censored`.
    pub fn effective_evals_to_first(&self, censored: u64) -> u64 {
        self.first_satisfying_eval.unwrap_or(censored)
    }

    /// MSB singletons identified by this run: sites of evaluated sets whose
    /// measured degradation exceeded the oracle cutoff.
    pub fn identified_sites(&self, is_critical: impl Fn(f64) -> bool) -> HashSet<FaultSite> {
        let mut out = HashSet::new();
        for t in &self.trace {
            if is_critical(t.accuracy) {
                out.extend(t.faults.sites().iter().copied());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_examples() {
        assert_eq!(reward(0.0, 5), -0.2);
        assert_eq!(reward(1.0, 3), 0.0);
        assert_eq!(reward(0.0, 0), -1.0);
    }

    #[test]
    fn tracker_prefers_satisfying_sets() {
        let mut t = BestTracker::new(0.2);
        t.offer(&FaultSet::msb_of([1]), 0.3);
        assert!(!t.satisfied());
        assert_eq!(t.best_reward(), Some(-0.7));
        t.offer(&FaultSet::msb_of([1, 2]), 0.1);
        assert!(t.satisfied());
        assert_eq!(t.best_reward(), Some(-0.45));
        t.offer(&FaultSet::msb_of([3]), 0.25);
        assert_eq!(t.best_reward(), Some(-0.45));
        assert_eq!(t.first_satisfying(), Some(2));
    }

    #[test]
    fn tracker_breaks_reward_ties_by_size_then_order() {
        let mut t = BestTracker::new(1.0);
        t.offer(&FaultSet::msb_of([5, 6]), 0.0);
        t.offer(&FaultSet::msb_of([1, 2]), 0.0);
        assert_eq!(t.best.as_ref().unwrap().faults, FaultSet::msb_of([1, 2]));
        t.offer(&FaultSet::msb_of([9]), 0.5);
        assert_eq!(t.best.as_ref().unwrap().faults, FaultSet::msb_of([9]));
    }
}
