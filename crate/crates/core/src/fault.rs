//! Bit-level fault space over the int8 weights.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dut::{evaluate, QuantizedModel, RepDataset};
use crate::dut::model::AppliedFaults;
use crate::error::{Error, Result};

/// Bit 7 is the sign bit of a two's-complement int8.
pub const MSB: u8 = 7;

/// One addressable bit: `(parameter index, bit position)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FaultSite {
    pub param_index: usize,
    pub bit: u8,
}

impl FaultSite {
    pub fn new(param_index: usize, bit: u8) -> Self {
        FaultSite { param_index, bit }
    }

    pub fn msb(param_index: usize) -> Self {
        FaultSite { param_index, bit: MSB }
    }
}

/// Flips one bit of an int8 value.
#[inline]
pub fn flip_bit(v: i8, bit: u8) -> i8 {
    (v as u8 ^ (1u8 << bit)) as i8
}

/// A set of fault sites kept sorted by `(param_index, bit)` without duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "FaultSetFile", into = "FaultSetFile")]
pub struct FaultSet {
    sites: Vec<FaultSite>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultSetFile {
    faults: Vec<FaultSite>,
}

impl TryFrom<FaultSetFile> for FaultSet {
    type Error = String;

    fn try_from(f: FaultSetFile) -> std::result::Result<Self, String> {
        if let Some(s) = f.faults.iter().find(|s| s.bit > MSB) {
            return Err(format!("bit {} out of range 0..=7", s.bit));
        }
        Ok(FaultSet::from_sites(f.faults))
    }
}

impl From<FaultSet> for FaultSetFile {
    fn from(s: FaultSet) -> Self {
        FaultSetFile { faults: s.sites }
    }
}

impl FromIterator<FaultSite> for FaultSet {
    fn from_iter<I: IntoIterator<Item = FaultSite>>(iter: I) -> Self {
        FaultSet::from_sites(iter.into_iter().collect())
    }
}

impl FaultSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Canonicalizes: sorts and removes duplicates.
    pub fn from_sites(mut sites: Vec<FaultSite>) -> Self {
        sites.sort_unstable();
        sites.dedup();
        FaultSet { sites }
    }

    pub fn msb_of(params: impl IntoIterator<Item = usize>) -> Self {
        params.into_iter().map(FaultSite::msb).collect()
    }

    pub fn sites(&self) -> &[FaultSite] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, site: &FaultSite) -> bool {
        self.sites.binary_search(site).is_ok()
    }

    /// Returns false if the site was already present.
    pub fn insert(&mut self, site: FaultSite) -> bool {
        match self.sites.binary_search(&site) {
            Ok(_) => false,
            Err(pos) => {
                self.sites.insert(pos, site);
                true
            }
        }
    }

    /// Returns false if the site was absent.
    pub fn remove(&mut self, site: &FaultSite) -> bool {
        match self.sites.binary_search(site) {
            Ok(pos) => {
                self.sites.remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("fault set serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("fault set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json_parse("fault set", &e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_pretty() + "\n").map_err(|e| Error::io(path, e))
    }
}

impl QuantizedModel {
    fn check_sites(&self, faults: &FaultSet) -> Result<()> {
        for s in faults.sites() {
            if s.param_index >= self.n_params() || s.bit > MSB {
                return Err(Error::SiteOutOfRange { param_index: s.param_index, bit: s.bit, n_params: self.n_params() });
            }
        }
        Ok(())
    }

    /// XOR-flips every site in place. Applications nest; revert in reverse order.
    pub fn apply_faults(&mut self, faults: &FaultSet) -> Result<()> {
        self.check_sites(faults)?;
        let mut record = AppliedFaults { sites: Vec::with_capacity(faults.len()), originals: Vec::with_capacity(faults.len()) };
        for s in faults.sites() {
            let (g, o) = self.locate(s.param_index).expect("checked");
            let q = &mut self.groups_mut()[g].q_weights[o];
            record.sites.push((s.param_index, s.bit));
            record.originals.push(*q);
            *q = flip_bit(*q, s.bit);
        }
        self.applied.push(record);
        Ok(())
    }

    /// Restores the weights touched by the most recent [`apply_faults`](Self::apply_faults) of `faults`.
    pub fn revert_faults(&mut self, faults: &FaultSet) -> Result<()> {
        let matches = self.applied.last().is_some_and(|top| {
            top.sites.len() == faults.len()
                && top.sites.iter().zip(faults.sites()).all(|(&(p, b), s)| p == s.param_index && b == s.bit)
        });
        if !matches {
            return Err(Error::NotApplied);
        }
        let record = self.applied.pop().expect("checked");
        // reverse order, so several bits of one weight restore the true original
        for (&(p, _), &orig) in record.sites.iter().zip(&record.originals).rev() {
            let (g, o) = self.locate(p).expect("checked");
            self.groups_mut()[g].q_weights[o] = orig;
        }
        Ok(())
    }
}

/// `log10 C(n_params * bits, k)`: a product for small k, log-gamma otherwise.
pub fn fault_space_size(n_params: f64, bits: f64, k: i64) -> Result<f64> {
    if k < 0 {
        return Err(Error::InvalidArgument("k must be nonnegative".into()));
    }
    let n = n_params * bits;
    let k = k as f64;
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds the fault space size {n}")));
    }
    if k == 0.0 {
        return Ok(0.0);
    }
    let j = k.min(n - k);
    if j <= 10_000.0 {
        // exact product form; log-gamma loses digits for n near 1e10
        let j = j as u64;
        return Ok((0..j).map(|i| ((n - i as f64) / (i + 1) as f64).log10()).sum());
    }
    use statrs::function::gamma::ln_gamma;
    let ln = ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0);
    Ok(ln / std::f64::consts::LN_10)
}

/// Ground truth for coverage: every single-site MSB flip whose relative accuracy
/// degradation exceeds the cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalOracle {
    pub threshold_tau: f64,
    pub degradation_cutoff: f64,
    pub baseline_accuracy: f64,
    pub critical_singletons: BTreeSet<FaultSite>,
    pub evaluations: u64,
}

pub const DEFAULT_DEGRADATION_CUTOFF: f64 = 0.90;

impl CriticalOracle {
    pub fn degradation(&self, accuracy: f64) -> f64 {
        relative_degradation(self.baseline_accuracy, accuracy)
    }

    pub fn is_critical_accuracy(&self, accuracy: f64) -> bool {
        self.degradation(accuracy) > self.degradation_cutoff
    }
}

pub fn relative_degradation(baseline: f64, accuracy: f64) -> f64 {
    if baseline > 0.0 {
        (baseline - accuracy) / baseline
    } else {
        0.0
    }
}

/// Exhaustively evaluates every single MSB flip. Costs `n_params + 1` evaluations.
pub fn build_critical_oracle(model: &mut QuantizedModel, data: &RepDataset, tau: f64) -> Result<CriticalOracle> {
    build_critical_oracle_with(model, data, tau, DEFAULT_DEGRADATION_CUTOFF)
}

pub fn build_critical_oracle_with(
    model: &mut QuantizedModel,
    data: &RepDataset,
    tau: f64,
    degradation_cutoff: f64,
) -> Result<CriticalOracle> {
    let baseline = evaluate(model, data)?.accuracy;
    let mut critical = BTreeSet::new();
    let mut evaluations = 1;
    for p in 0..model.n_params() {
        let f = FaultSet::msb_of([p]);
        model.apply_faults(&f)?;
        let acc = evaluate(model, data);
        model.revert_faults(&f)?;
        evaluations += 1;
        if relative_degradation(baseline, acc?.accuracy) > degradation_cutoff {
            critical.insert(FaultSite::msb(p));
        }
    }
    Ok(CriticalOracle {
        threshold_tau: tau,
        degradation_cutoff,
        baseline_accuracy: baseline,
        critical_singletons: critical,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dut::ArchConfig;

    fn model() -> QuantizedModel {
        let arch = ArchConfig { n_blocks: 1, width: 4, n_heads: 2, ffn_hidden: 3, seq_len: 2, n_classes: 3, ..ArchConfig::default() };
        let flat: Vec<f64> = (0..arch.n_params()).map(|i| ((i * 31 % 17) as f64 - 8.0) / 5.0).collect();
        QuantizedModel::from_flat(arch, 0, &flat).unwrap()
    }

    #[test]
    fn msb_flip_of_one_is_minus_127() {
        assert_eq!(flip_bit(0b0000_0001, 7), -127);
        assert_eq!(flip_bit(-127, 7), 1);
    }

    #[test]
    fn msb_rule_holds_for_all_values() {
        for v in i8::MIN..=i8::MAX {
            let expect = if v >= 0 { i16::from(v) - 128 } else { i16::from(v) + 128 };
            assert_eq!(i16::from(flip_bit(v, MSB)), expect);
        }
    }

    #[test]
    fn canonical_order_and_dedup() {
        let f = FaultSet::from_sites(vec![FaultSite::new(12, 7), FaultSite::new(3, 4), FaultSite::new(12, 7)]);
        assert_eq!(f.sites(), &[FaultSite::new(3, 4), FaultSite::new(12, 7)]);
        assert_eq!(f.to_json(), r#"{"faults":[{"param_index":3,"bit":4},{"param_index":12,"bit":7}]}"#);
    }

    #[test]
    fn json_rejects_bad_bits_and_reports_position() {
        assert!(FaultSet::from_json(r#"{"faults":[{"param_index":1,"bit":8}]}"#).is_err());
        let err = FaultSet::from_json("{\"faults\": [\n {\"param_index\": }").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_set_is_identity() {
        let mut m = model();
        let before = m.q_weights();
        m.apply_faults(&FaultSet::new()).unwrap();
        assert_eq!(m.q_weights(), before);
        m.revert_faults(&FaultSet::new()).unwrap();
    }

    #[test]
    fn apply_then_revert_restores_and_double_revert_fails() {
        let mut m = model();
        let before = m.q_weights();
        let f = FaultSet::from_sites(vec![FaultSite::new(0, 7), FaultSite::new(5, 2), FaultSite::new(9, 0)]);
        m.apply_faults(&f).unwrap();
        assert_ne!(m.q_weights(), before);
        m.revert_faults(&f).unwrap();
        assert_eq!(m.q_weights(), before);
        assert!(matches!(m.revert_faults(&f), Err(Error::NotApplied)));
    }

    #[test]
    fn several_bits_of_one_weight_revert_cleanly() {
        let mut m = model();
        let before = m.q_weights();
        let f = FaultSet::from_sites(vec![FaultSite::new(4, 1), FaultSite::new(4, 6), FaultSite::new(4, 7)]);
        m.apply_faults(&f).unwrap();
        assert_eq!(m.q_weight(4), (before[4] as u8 ^ 0b1100_0010) as i8);
        m.revert_faults(&f).unwrap();
        assert_eq!(m.q_weights(), before);
    }

    #[test]
    fn revert_of_unapplied_set_fails() {
        let mut m = model();
        m.apply_faults(&FaultSet::msb_of([1])).unwrap();
        assert!(m.revert_faults(&FaultSet::msb_of([2])).is_err());
    }

    #[test]
    fn out_of_range_site_is_rejected() {
        let mut m = model();
        let n = m.n_params();
        assert!(matches!(m.apply_faults(&FaultSet::msb_of([n])), Err(Error::SiteOutOfRange { .. })));
        assert_eq!(m.applied_depth(), 0);
    }

    #[test]
    fn fault_space_size_examples() {
        assert_eq!(fault_space_size(123.0, 8.0, 0).unwrap(), 0.0);
        let v = fault_space_size(10.0, 8.0, 3).unwrap();
        assert!((v - 82160f64.log10()).abs() < 1e-9, "{v}");
        assert!(fault_space_size(10.0, 8.0, -1).is_err());
        assert!(fault_space_size(1.0, 8.0, 9).is_err());
        // 8e9 int8 parameters, 5 flips: (6.4e10)^5 / 5! = 10^51.95
        assert!((fault_space_size(8e9, 8.0, 5).unwrap() - 51.951718623803956).abs() < 1e-9);
    }
}
