//! Protection design-space exploration: coverage, area overhead and
//! cost-effectiveness of uniform schemes against selective ECC on the groups
//! where critical faults were found.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dut::{GroupRole, QuantizedModel};
use crate::error::{Error, Result};
use crate::fault::FaultSite;

/// Area overhead of uniform SECDED, also the base cost of selective ECC.
pub const SECDED_OVERHEAD_PCT: f64 = 18.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    None,
    Parity,
    EccSecded,
    EccChipkill,
    Tmr,
    RiftGuidedEcc,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::None => "none",
            SchemeKind::Parity => "parity",
            SchemeKind::EccSecded => "ecc_secded",
            SchemeKind::EccChipkill => "ecc_chipkill",
            SchemeKind::Tmr => "tmr",
            SchemeKind::RiftGuidedEcc => "rift_guided_ecc",
        }
    }

    fn label(self) -> &'static str {
        match self {
            SchemeKind::None => "No Protection",
            SchemeKind::Parity => "Parity (Uniform)",
            SchemeKind::EccSecded => "ECC SECDED (Uniform)",
            SchemeKind::EccChipkill => "ECC ChipKill (Uniform)",
            SchemeKind::Tmr => "TMR (Uniform)",
            SchemeKind::RiftGuidedEcc => "RIFT-Guided ECC",
        }
    }

    fn note(self) -> &'static str {
        match self {
            SchemeKind::None => "Baseline",
            SchemeKind::Parity => "Detect Only",
            SchemeKind::EccSecded => "Std Correction",
            SchemeKind::EccChipkill => "Adv Correction",
            SchemeKind::Tmr => "Max Redundancy",
            SchemeKind::RiftGuidedEcc => "Targeted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectionScheme {
    pub kind: SchemeKind,
    pub area_overhead_pct: f64,
    pub corrects: bool,
    /// Fraction of in-scope single-bit faults the scheme repairs. A
    /// calibration input, not a property derived from the code.
    pub efficacy: f64,
    /// `None` protects every group.
    pub protected_groups: Option<BTreeSet<GroupRole>>,
}

impl ProtectionScheme {
    pub fn uniform(kind: SchemeKind, area_overhead_pct: f64, corrects: bool, efficacy: f64) -> Self {
        ProtectionScheme { kind, area_overhead_pct, corrects, efficacy, protected_groups: None }
    }

    pub fn protects(&self, role: GroupRole) -> bool {
        self.protected_groups.as_ref().is_none_or(|g| g.contains(&role))
    }

    fn validate(&self) -> Result<()> {
        if !(self.area_overhead_pct >= 0.0) || !(0.0..=1.0).contains(&self.efficacy) {
            return Err(Error::InvalidArgument(format!(
                "{}: overhead must be nonnegative and efficacy in [0, 1]",
                self.kind.as_str()
            )));
        }
        Ok(())
    }
}

/// The five uniform schemes with their synthesis overheads and efficacies
/// calibrated to the published coverage figures.
pub fn uniform_schemes() -> Vec<ProtectionScheme> {
    vec![
        ProtectionScheme::uniform(SchemeKind::None, 0.0, false, 0.0),
        ProtectionScheme::uniform(SchemeKind::Parity, 6.3, false, 0.0),
        ProtectionScheme::uniform(SchemeKind::EccSecded, SECDED_OVERHEAD_PCT, true, 0.951),
        ProtectionScheme::uniform(SchemeKind::EccChipkill, 31.4, true, 0.987),
        ProtectionScheme::uniform(SchemeKind::Tmr, 205.0, true, 0.992),
    ]
}

/// Rounds to one decimal, the precision of the report.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Percentage of `faults` the scheme corrects. Detection-only schemes score 0.
pub fn scheme_coverage(scheme: &ProtectionScheme, faults: &[FaultSite], model: &QuantizedModel) -> Result<f64> {
    scheme.validate()?;
    if faults.is_empty() {
        return Err(Error::InvalidArgument("coverage needs at least one critical fault".into()));
    }
    let mut hit = 0usize;
    for f in faults {
        let role = model.role_of(f.param_index).ok_or(Error::SiteOutOfRange {
            param_index: f.param_index,
            bit: f.bit,
            n_params: model.n_params(),
        })?;
        if scheme.protects(role) {
            hit += 1;
        }
    }
    if !scheme.corrects {
        return Ok(0.0);
    }
    Ok(100.0 * hit as f64 / faults.len() as f64 * scheme.efficacy)
}

/// `coverage / overhead` at one decimal; `None` at zero overhead.
pub fn cost_effectiveness(coverage_pct: f64, overhead_pct: f64) -> Option<f64> {
    (overhead_pct > 0.0).then(|| round1(coverage_pct / overhead_pct))
}

/// Share of stored weight bytes in `groups` (one byte per int8 weight).
pub fn protected_byte_fraction(groups: &BTreeSet<GroupRole>, model: &QuantizedModel) -> f64 {
    let total = model.n_params();
    if total == 0 {
        return 0.0;
    }
    let covered: usize = model.groups().iter().filter(|g| groups.contains(&g.name)).map(|g| g.len()).sum();
    covered as f64 / total as f64
}

/// Overhead of applying a base scheme only to `groups`, proportional to the bytes covered.
pub fn selective_overhead(groups: &BTreeSet<GroupRole>, model: &QuantizedModel, base_overhead_pct: f64) -> f64 {
    base_overhead_pct * protected_byte_fraction(groups, model)
}

/// Share of `faults` per group.
pub fn fault_shares(faults: &[FaultSite], model: &QuantizedModel) -> BTreeMap<GroupRole, f64> {
    let mut counts: BTreeMap<GroupRole, usize> = BTreeMap::new();
    for f in faults {
        if let Some(r) = model.role_of(f.param_index) {
            *counts.entry(r).or_default() += 1;
        }
    }
    let n = faults.len().max(1) as f64;
    counts.into_iter().map(|(r, c)| (r, c as f64 / n)).collect()
}

/// Groups holding at least `min_share` of the critical faults.
pub fn vulnerable_groups(faults: &[FaultSite], model: &QuantizedModel, min_share: f64) -> BTreeSet<GroupRole> {
    fault_shares(faults, model).into_iter().filter(|&(_, s)| s >= min_share).map(|(r, _)| r).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DseConfig {
    pub schemes: Vec<ProtectionScheme>,
    pub selective_base_overhead_pct: f64,
    pub selective_efficacy: f64,
    /// Minimum share of critical faults for a group to be protected.
    pub min_group_share: f64,
}

impl Default for DseConfig {
    fn default() -> Self {
        DseConfig {
            schemes: uniform_schemes(),
            selective_base_overhead_pct: SECDED_OVERHEAD_PCT,
            selective_efficacy: 1.0,
            min_group_share: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DseRow {
    pub scheme: SchemeKind,
    pub area_overhead_pct: f64,
    pub fault_coverage_pct: f64,
    /// `None` at zero overhead.
    pub cost_effectiveness: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub protected_groups: Vec<GroupRole>,
    pub notes: String,
}

impl DseRow {
    pub fn new(scheme: SchemeKind, area_overhead_pct: f64, fault_coverage_pct: f64) -> Self {
        DseRow {
            scheme,
            area_overhead_pct,
            fault_coverage_pct,
            cost_effectiveness: cost_effectiveness(fault_coverage_pct, area_overhead_pct),
            protected_groups: Vec::new(),
            notes: scheme.note().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DseReport {
    pub rows: Vec<DseRow>,
    /// CE of selective ECC over CE of TMR, from the rounded CE values.
    pub ce_ratio_vs_tmr: Option<f64>,
    pub n_critical_faults: usize,
    pub notes: Vec<String>,
}

impl DseReport {
    pub fn from_rows(rows: Vec<DseRow>, n_critical_faults: usize, notes: Vec<String>) -> Self {
        let ce = |k| rows.iter().find(|r: &&DseRow| r.scheme == k).and_then(|r| r.cost_effectiveness);
        let ce_ratio_vs_tmr = match (ce(SchemeKind::RiftGuidedEcc), ce(SchemeKind::Tmr)) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        DseReport { rows, ce_ratio_vs_tmr, n_critical_faults, notes }
    }

    pub fn row(&self, kind: SchemeKind) -> Option<&DseRow> {
        self.rows.iter().find(|r| r.scheme == kind)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Strategy | AO (%) | FC (%) | CE (Cov/Area) | Notes |\n|---|---:|---:|---:|---|\n");
        for r in &self.rows {
            let ce = r.cost_effectiveness.map_or("--".to_string(), |c| format!("{c:.1}"));
            let mut notes = r.notes.clone();
            if !r.protected_groups.is_empty() {
                let g: Vec<&str> = r.protected_groups.iter().map(|g| g.as_str()).collect();
                let _ = write!(notes, " ({})", g.join(", "));
            }
            let _ = writeln!(
                s,
                "| {} | {:.1} | {:.1} | {ce} | {notes} |",
                r.scheme.label(),
                r.area_overhead_pct,
                r.fault_coverage_pct
            );
        }
        if let Some(x) = self.ce_ratio_vs_tmr {
            let _ = writeln!(s, "\nCE ratio, selective ECC vs TMR: {x:.1}x");
        }
        for n in &self.notes {
            let _ = writeln!(s, "\n{n}");
        }
        s
    }
}

/// The published comparison, rebuilt from its overhead and coverage inputs.
pub fn reference_report() -> DseReport {
    let rows = vec![
        DseRow::new(SchemeKind::None, 0.0, 0.0),
        DseRow::new(SchemeKind::Parity, 6.3, 0.0),
        DseRow::new(SchemeKind::EccSecded, SECDED_OVERHEAD_PCT, 95.1),
        DseRow::new(SchemeKind::EccChipkill, 31.4, 98.7),
        DseRow::new(SchemeKind::Tmr, 205.0, 99.2),
        DseRow::new(SchemeKind::RiftGuidedEcc, 13.8, 88.5),
    ];
    DseReport::from_rows(rows, 0, Vec::new())
}

/// Evaluates the uniform schemes and selective ECC against `faults` found on `model`.
pub fn dse_report(model: &QuantizedModel, faults: &[FaultSite], cfg: &DseConfig) -> Result<DseReport> {
    if !(0.0..=1.0).contains(&cfg.min_group_share) {
        return Err(Error::InvalidArgument("min_group_share must be in [0, 1]".into()));
    }
    let mut rows = Vec::with_capacity(cfg.schemes.len() + 1);
    for sch in &cfg.schemes {
        let cov = scheme_coverage(sch, faults, model)?;
        let mut row = DseRow::new(sch.kind, sch.area_overhead_pct, round1(cov));
        if let Some(g) = &sch.protected_groups {
            row.protected_groups = g.iter().copied().collect();
        }
        rows.push(row);
    }
    let groups = vulnerable_groups(faults, model, cfg.min_group_share);
    let selective = ProtectionScheme {
        kind: SchemeKind::RiftGuidedEcc,
        area_overhead_pct: selective_overhead(&groups, model, cfg.selective_base_overhead_pct),
        corrects: true,
        efficacy: cfg.selective_efficacy,
        protected_groups: Some(groups.clone()),
    };
    let cov = scheme_coverage(&selective, faults, model)?;
    let mut row = DseRow::new(SchemeKind::RiftGuidedEcc, round1(selective.area_overhead_pct), round1(cov));
    row.cost_effectiveness = cost_effectiveness(row.fault_coverage_pct, row.area_overhead_pct);
    row.protected_groups = groups.into_iter().collect();
    rows.push(row);
    let notes = vec![format!(
        "Selective overhead = {:.1}% x protected byte fraction; {} critical fault sites.",
        cfg.selective_base_overhead_pct,
        faults.len()
    )];
    Ok(DseReport::from_rows(rows, faults.len(), notes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dut::ArchConfig;

    fn model() -> QuantizedModel {
        let arch = ArchConfig { n_blocks: 1, width: 4, n_heads: 2, ffn_hidden: 3, seq_len: 2, n_classes: 3, ..ArchConfig::default() };
        let flat: Vec<f64> = (0..arch.n_params()).map(|i| ((i * 13 % 11) as f64 - 5.0) / 3.0).collect();
        QuantizedModel::from_flat(arch, 0, &flat).unwrap()
    }

    fn site_in(m: &QuantizedModel, role: GroupRole, k: usize) -> FaultSite {
        let g = m.groups().iter().position(|g| g.name == role).unwrap();
        FaultSite::msb(m.group_offset(g) + k)
    }

    #[test]
    fn cost_effectiveness_rows() {
        assert_eq!(cost_effectiveness(95.1, 18.7), Some(5.1));
        assert_eq!(cost_effectiveness(98.7, 31.4), Some(3.1));
        assert_eq!(cost_effectiveness(99.2, 205.0), Some(0.5));
        assert_eq!(cost_effectiveness(88.5, 13.8), Some(6.4));
        assert_eq!(cost_effectiveness(0.0, 6.3), Some(0.0));
        assert_eq!(cost_effectiveness(0.0, 0.0), None);
    }

    #[test]
    fn reference_ratio() {
        let r = reference_report();
        assert_eq!(r.ce_ratio_vs_tmr, Some(12.8));
        assert!(r.to_markdown().contains("| No Protection | 0.0 | 0.0 | -- | Baseline |"));
    }

    #[test]
    fn selective_overhead_fraction() {
        let m = model();
        let all: BTreeSet<GroupRole> = GroupRole::ALL.into_iter().collect();
        assert_eq!(selective_overhead(&all, &m, 18.7), 18.7);
        assert_eq!(selective_overhead(&BTreeSet::new(), &m, 18.7), 0.0);
        assert!((round1(18.7 * 0.738) - 13.8).abs() < 0.05);
    }

    #[test]
    fn uniform_coverage_is_efficacy() {
        let m = model();
        let faults = [site_in(&m, GroupRole::FfnIn, 0), site_in(&m, GroupRole::Classifier, 1)];
        let s = uniform_schemes();
        let cov: Vec<f64> = s.iter().map(|x| round1(scheme_coverage(x, &faults, &m).unwrap())).collect();
        assert_eq!(cov, vec![0.0, 0.0, 95.1, 98.7, 99.2]);
        assert!(scheme_coverage(&s[2], &[], &m).is_err());
    }

    #[test]
    fn selective_coverage_is_share_in_groups() {
        let m = model();
        let mut faults = vec![site_in(&m, GroupRole::AttentionV, 0), site_in(&m, GroupRole::NormScale, 1)];
        faults.extend([site_in(&m, GroupRole::FfnOut, 0), site_in(&m, GroupRole::AttentionQ, 2)]);
        let groups: BTreeSet<GroupRole> =
            [GroupRole::AttentionQ, GroupRole::AttentionV, GroupRole::NormScale].into_iter().collect();
        let s = ProtectionScheme { protected_groups: Some(groups), ..ProtectionScheme::uniform(SchemeKind::RiftGuidedEcc, 1.0, true, 1.0) };
        assert_eq!(scheme_coverage(&s, &faults, &m).unwrap(), 75.0);
        let none = ProtectionScheme { protected_groups: Some(BTreeSet::new()), ..s };
        assert_eq!(scheme_coverage(&none, &faults, &m).unwrap(), 0.0);
    }

    #[test]
    fn report_protects_groups_with_faults() {
        let m = model();
        let faults = [site_in(&m, GroupRole::Classifier, 0), site_in(&m, GroupRole::Classifier, 1)];
        let r = dse_report(&m, &faults, &DseConfig::default()).unwrap();
        let row = r.row(SchemeKind::RiftGuidedEcc).unwrap();
        assert_eq!(row.protected_groups, vec![GroupRole::Classifier]);
        assert_eq!(row.fault_coverage_pct, 100.0);
        assert!(row.area_overhead_pct < SECDED_OVERHEAD_PCT);
        assert_eq!(r.row(SchemeKind::Tmr).unwrap().fault_coverage_pct, 99.2);
    }
}
