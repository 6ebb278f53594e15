use proptest::prelude::*;
use rift_core::candidate::candidate_count;
use rift_core::dse::{cost_effectiveness, scheme_coverage, ProtectionScheme, SchemeKind};
use rift_core::dut::{ArchConfig, QuantizedModel};
use rift_core::fault::flip_bit;
use rift_core::{FaultSet, FaultSite};

fn model() -> QuantizedModel {
    let arch = ArchConfig { n_blocks: 1, width: 4, n_heads: 2, ffn_hidden: 3, seq_len: 2, n_classes: 3, final_norm: true };
    let flat: Vec<f64> = (0..arch.n_params()).map(|i| ((i * 29 % 31) as f64 - 15.0) / 9.0).collect();
    QuantizedModel::from_flat(arch, 1, &flat).unwrap()
}

#[test]
fn msb_rule_exhaustive() {
    for v in i8::MIN..=i8::MAX {
        let f = flip_bit(v, 7) as i16;
        let expected = if v >= 0 { v as i16 - 128 } else { v as i16 + 128 };
        assert_eq!(f, expected, "{v}");
        assert_eq!(flip_bit(flip_bit(v, 7), 7), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn apply_revert_is_identity(sites in prop::collection::vec((0usize..130, 0u8..8), 0..12)) {
        let mut m = model();
        let before = m.q_weights();
        let f = FaultSet::from_sites(sites.into_iter().map(|(p, b)| FaultSite::new(p % m.n_params(), b)).collect());
        m.apply_faults(&f).unwrap();
        m.revert_faults(&f).unwrap();
        prop_assert_eq!(m.q_weights(), before);
    }

    #[test]
    fn nested_applications_unwind(a in prop::collection::vec(0usize..130, 1..6), b in prop::collection::vec(0usize..130, 1..6)) {
        let mut m = model();
        let n = m.n_params();
        let before = m.q_weights();
        let fa = FaultSet::msb_of(a.into_iter().map(|p| p % n));
        let fb = FaultSet::msb_of(b.into_iter().map(|p| p % n));
        m.apply_faults(&fa).unwrap();
        m.apply_faults(&fb).unwrap();
        m.revert_faults(&fb).unwrap();
        m.revert_faults(&fa).unwrap();
        prop_assert_eq!(m.q_weights(), before);
    }

    #[test]
    fn fault_sets_are_canonical(sites in prop::collection::vec((0usize..1000, 0u8..8), 0..40)) {
        let f = FaultSet::from_sites(sites.iter().map(|&(p, b)| FaultSite::new(p, b)).collect());
        let mut rev = sites.clone();
        rev.reverse();
        let g = FaultSet::from_sites(rev.into_iter().map(|(p, b)| FaultSite::new(p, b)).collect());
        prop_assert_eq!(&f, &g);
        prop_assert!(f.sites().windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(FaultSet::from_json(&f.to_json()).unwrap(), f);
    }

    #[test]
    fn candidate_count_is_floor_with_floor_one(n in 1usize..2_000_000, rho in 0.0001f64..1.0) {
        let k = candidate_count(n, rho).unwrap();
        prop_assert_eq!(k, ((rho * n as f64).floor() as usize).max(1));
        prop_assert!(k <= n);
    }

    #[test]
    fn coverage_grows_with_efficacy(e1 in 0.0f64..1.0, e2 in 0.0f64..1.0, area in 0.1f64..300.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let faults = vec![FaultSite::msb(0), FaultSite::msb(7), FaultSite::msb(40)];
        let m = model();
        let a = scheme_coverage(&ProtectionScheme::uniform(SchemeKind::EccSecded, area, true, lo), &faults, &m).unwrap();
        let b = scheme_coverage(&ProtectionScheme::uniform(SchemeKind::EccSecded, area, true, hi), &faults, &m).unwrap();
        prop_assert!(a <= b);
        let ca = cost_effectiveness(a, area);
        let cb = cost_effectiveness(b, area);
        prop_assert!(ca <= cb);
    }
}
