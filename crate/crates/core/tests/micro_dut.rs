mod common;

use common::{critical_site, micro_dut, only};
use rift_core::baselines::{run_evolutionary, run_gradient, run_magnitude, run_rfi, EvoConfig};
use rift_core::{evaluate, CandidateSet, FaultSet, FaultSite};

const TAU: f64 = 0.5;

#[test]
fn fixture_has_exactly_one_critical_bit() {
    let mut m = micro_dut();
    assert_eq!(evaluate(&m.model, &m.data).unwrap().accuracy, 1.0);
    let mut critical = Vec::new();
    for p in 0..m.model.n_params() {
        for b in 0..8 {
            let f = only(FaultSite::new(p, b));
            m.model.apply_faults(&f).unwrap();
            if evaluate(&m.model, &m.data).unwrap().accuracy <= TAU {
                critical.push((p, b));
            }
            m.model.revert_faults(&f).unwrap();
        }
    }
    assert_eq!(critical, vec![(m.gate, 7)]);
}

#[test]
fn budget_of_one_consumes_one_evaluation() {
    let mut m = micro_dut();
    let r = run_rfi(&mut m.model, &m.data, 1, 3, TAU, 0).unwrap();
    assert_eq!(r.evaluations_used, 1);
    assert_eq!(r.reward_trace.len(), 1);
}

#[test]
fn rfi_hit_rate_matches_sampling_scheme() {
    let mut m = micro_dut();
    let (budget, max_k, seeds) = (100u64, 20usize, 500u64);
    let space = (m.model.n_params() * 8) as f64;
    // m ~ U{1..max_k} distinct sites per draw, so a draw holds a given site with probability E[m] / |B(W)|
    let p = (max_k as f64 + 1.0) / 2.0 / space;
    let analytic = 1.0 - (1.0 - p).powi(budget as i32);
    let mut hits = 0;
    for seed in 0..seeds {
        let r = run_rfi(&mut m.model, &m.data, budget, max_k, TAU, seed).unwrap();
        assert_eq!(r.evaluations_used, budget);
        hits += usize::from(r.satisfied);
    }
    let empirical = hits as f64 / seeds as f64;
    assert!((empirical - analytic).abs() <= 0.05, "empirical {empirical} vs analytic {analytic}");
}

#[test]
fn magnitude_and_gradient_find_the_gate_first() {
    let mut m = micro_dut();
    let crit = critical_site(&m);
    for r in [run_magnitude(&mut m.model, &m.data, 10, TAU).unwrap(), run_gradient(&mut m.model, &m.data, 10, TAU).unwrap()] {
        assert_eq!(r.first_satisfying_eval, Some(1), "{}", r.method);
        assert_eq!(r.f_crit, only(crit));
        assert_eq!(r.evaluations_used, 10);
    }
}

#[test]
fn evolutionary_finds_singleton_in_candidate_pool() {
    let mut m = micro_dut();
    let mut idx: Vec<usize> = (0..49).map(|i| (i * 19 + 5) % m.gate).collect();
    idx.sort_unstable();
    idx.dedup();
    idx.push(m.gate);
    let cands = CandidateSet::from_indices(idx, 0.05).unwrap();
    let evo = EvoConfig::default();
    let mut found = 0;
    for seed in 0..50 {
        let r = run_evolutionary(&mut m.model, &m.data, &cands, &evo, 500, TAU, seed).unwrap();
        assert_eq!(r.evaluations_used, 500);
        if r.satisfied && r.f_crit.len() == 1 {
            assert_eq!(r.f_crit, only(critical_site(&m)));
            found += 1;
        }
    }
    assert!(found >= 45, "{found}/50");
}

#[test]
fn searches_leave_the_model_untouched() {
    let mut m = micro_dut();
    let before = m.model.q_weights();
    run_rfi(&mut m.model, &m.data, 50, 5, TAU, 3).unwrap();
    run_magnitude(&mut m.model, &m.data, 5, TAU).unwrap();
    assert_eq!(m.model.q_weights(), before);
    assert_eq!(m.model.applied_depth(), 0);
    assert!(FaultSet::new().is_empty());
}
