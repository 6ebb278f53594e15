//! Multi-seed experiments: the main method comparison, ablations and the
//! scalability sweep, with their on-disk reports.

mod ablation;
mod scale;

pub use ablation::{
    ablation_alpha, ablation_rl_only, ablation_rl_params, write_alpha_csv, write_rl_params_csv, AlphaRow, ArmSummary,
    RlOnlyReport, RlParamRow,
};
pub use scale::{arch_for_params, scalability_sweep, write_scale_csv, ScalabilityReport, ScaleRow};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, coverage, EvoConfig, Method};
use crate::candidate::{group_concentration, select_candidates, CandidateSet, DEFAULT_RHO};
use crate::dse::{dse_report, DseConfig, DseReport};
use crate::dut::{build_dut, evaluate, thread_evaluations, Dut, DutConfig, GroupRole, QuantizedModel, RepDataset};
use crate::error::{Error, Result};
use crate::fault::{build_critical_oracle_with, CriticalOracle, FaultSet, DEFAULT_DEGRADATION_CUTOFF};
use crate::rl::{self, RlConfig};
use crate::search::SearchResult;
use crate::sensitivity::{apply_hotspot_weighting, hybrid_scores, HotspotMap, SensitivityProfile};
use crate::stats::{summarize, StatsSummary};
use crate::uvm;

/// Environment variable that replaces the configured base seed.
pub const SEED_ENV: &str = "RIFT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub dut: DutConfig,
    pub dut_seed: u64,
    /// Search seeds are `seed, seed + 1, ...`.
    pub seed: u64,
    pub n_seeds: usize,
    pub alpha: f64,
    pub hotspot_beta: f64,
    /// Traffic weights for hotspot weighting; uniform when absent.
    pub hotspot: Option<HotspotMap>,
    pub rho: f64,
    /// Failure threshold; `None` means 1.5x chance accuracy. Replaces `rl.tau`.
    pub tau: Option<f64>,
    pub rl: RlConfig,
    pub baselines: Vec<Method>,
    pub evo: EvoConfig,
    /// Largest random set drawn by RFI; `None` means `rl.t_max`.
    pub rfi_max_k: Option<usize>,
    /// Build the exhaustive single-MSB oracle for coverage.
    pub oracle: bool,
    pub degradation_cutoff: f64,
    pub dse: DseConfig,
    /// Write a UVM sequence for every satisfied RIFT result.
    pub uvm: bool,
    pub uvm_config_key: String,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            dut: DutConfig::default(),
            dut_seed: 42,
            seed: 0,
            n_seeds: 15,
            alpha: 0.5,
            hotspot_beta: 0.0,
            hotspot: None,
            rho: DEFAULT_RHO,
            tau: None,
            rl: RlConfig::default(),
            baselines: Method::BASELINES.to_vec(),
            evo: EvoConfig::default(),
            rfi_max_k: None,
            oracle: true,
            degradation_cutoff: DEFAULT_DEGRADATION_CUTOFF,
            dse: DseConfig::default(),
            uvm: false,
            uvm_config_key: uvm::DEFAULT_CONFIG_KEY.to_string(),
        }
    }
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json_parse("campaign config", &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `RIFT_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v} is not a seed")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.hotspot_beta >= 0.0) {
            return bad("hotspot_beta must be nonnegative".into());
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho {} outside (0, 1]", self.rho));
        }
        if self.baselines.contains(&Method::Rift) {
            return bad("rift always runs; list only baselines".into());
        }
        if self.rl.budget() == 0 {
            return bad("e_max * t_max must be positive".into());
        }
        if self.rfi_max_k == Some(0) {
            return bad("rfi_max_k must be positive".into());
        }
        self.dut.arch.validate()?;
        self.rl_config().validate()?;
        if self.baselines.contains(&Method::Evolutionary) {
            self.evo.validate()?;
            if self.rl.budget() < self.evo.population as u64 {
                return bad("budget must cover one evolutionary population".into());
            }
        }
        if self.uvm && self.uvm_config_key.is_empty() {
            return bad("uvm_config_key must not be empty".into());
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(1.5 / self.dut.arch.n_classes as f64)
    }

    pub fn rl_config(&self) -> RlConfig {
        RlConfig { tau: self.tau(), ..self.rl.clone() }
    }

    /// Evaluations granted to every method per seed.
    pub fn budget(&self) -> u64 {
        self.rl.budget()
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| self.seed.wrapping_add(i)).collect()
    }

    /// Stand-in `|F_crit|` for a run that never met the threshold.
    pub fn censored_size(&self) -> usize {
        self.rl.t_max + 1
    }

    /// Stand-in evaluations-to-first for a run that never met the threshold.
    pub fn censored_evals(&self) -> u64 {
        self.budget() + 1
    }
}

/// A trained DUT with its sensitivity ranking and candidates.
pub struct Prepared {
    pub dut: Dut,
    pub tau: f64,
    pub profile: SensitivityProfile,
    pub cands: CandidateSet,
}

/// Hybrid scores at `alpha`, with hotspot weighting when configured.
pub fn profile_for(cfg: &CampaignConfig, model: &QuantizedModel, data: &RepDataset, alpha: f64) -> Result<SensitivityProfile> {
    let p = hybrid_scores(model, data, alpha)?;
    if cfg.hotspot_beta > 0.0 {
        let map = cfg.hotspot.clone().unwrap_or_else(HotspotMap::uniform);
        return apply_hotspot_weighting(&p, model, &map, cfg.hotspot_beta);
    }
    Ok(p)
}

pub fn prepare(cfg: &CampaignConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dut = build_dut(&cfg.dut, cfg.dut_seed)?;
    log::info!(
        "DUT: {} params, clean accuracy {:.4} after {} steps",
        dut.model.n_params(),
        dut.report.clean_accuracy,
        dut.report.steps
    );
    let profile = profile_for(cfg, &dut.model, dut.rep(), cfg.alpha)?;
    let cands = select_candidates(&profile, cfg.rho)?;
    Ok(Prepared { dut, tau: cfg.tau(), profile, cands })
}

/// Runs one method for one seed on `model`, which is left unchanged.
pub fn run_method(
    method: Method,
    model: &mut QuantizedModel,
    data: &RepDataset,
    cands: &CandidateSet,
    cfg: &CampaignConfig,
    seed: u64,
) -> Result<SearchResult> {
    let (budget, tau) = (cfg.budget(), cfg.tau());
    match method {
        Method::Rift => rl::run_search(model, data, cands, &cfg.rl_config(), seed),
        Method::Rfi => baselines::run_rfi(model, data, budget, cfg.rfi_max_k.unwrap_or(cfg.rl.t_max), tau, seed),
        Method::Magnitude => baselines::run_magnitude(model, data, budget, tau),
        Method::Gradient => baselines::run_gradient(model, data, budget, tau),
        Method::Evolutionary => baselines::run_evolutionary(model, data, cands, &cfg.evo, budget, tau, seed),
    }
}

fn is_deterministic(method: Method) -> bool {
    matches!(method, Method::Magnitude | Method::Gradient)
}

/// Accuracy of `result.f_crit` re-applied to a fresh copy of the model.
pub fn replay_accuracy(model: &QuantizedModel, data: &RepDataset, faults: &FaultSet) -> Result<f64> {
    let mut m = model.clone();
    m.apply_faults(faults)?;
    let acc = evaluate(&m, data)?.accuracy;
    m.revert_faults(faults)?;
    Ok(acc)
}

/// Everything produced for one search seed. Holds no wall-clock data, so it
/// is identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub tau: f64,
    pub results: Vec<SearchResult>,
    /// Oracle coverage per method; null when the oracle is off or empty.
    pub coverage: BTreeMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<String, String>,
}

impl SeedRecord {
    pub fn result(&self, method: &str) -> Option<&SearchResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub satisfied: usize,
    /// Per-seed `|F_crit|`, censored for unsatisfied runs.
    pub sizes: Vec<usize>,
    pub size: StatsSummary,
    /// Per-seed evaluations to the first satisfying set, censored.
    pub evals_to_first: Vec<u64>,
    pub evals: StatsSummary,
    pub mean_coverage: Option<f64>,
    pub mean_distinct_sets: f64,
    pub mean_evaluations: f64,
}

/// Aggregates the runs of one method; statistics compare against `reference`
/// (sizes, evals) when given.
pub fn summarize_method(
    method: &str,
    runs: &[&SearchResult],
    cov: &[Option<f64>],
    reference: Option<(&[f64], &[f64])>,
    censored_size: usize,
    censored_evals: u64,
) -> Result<MethodSummary> {
    let sizes: Vec<usize> = runs.iter().map(|r| r.effective_size(censored_size)).collect();
    let evals: Vec<u64> = runs.iter().map(|r| r.effective_evals_to_first(censored_evals)).collect();
    let sf: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let ef: Vec<f64> = evals.iter().map(|&e| e as f64).collect();
    let (size, ev) = match reference {
        Some((rs, re)) => (summarize(&sf, Some(("rift", rs)))?, summarize(&ef, Some(("rift", re)))?),
        None => (summarize(&sf, None)?, summarize(&ef, None)?),
    };
    let covs: Vec<f64> = cov.iter().flatten().copied().collect();
    let n = runs.len() as f64;
    Ok(MethodSummary {
        method: method.to_string(),
        runs: runs.len(),
        satisfied: runs.iter().filter(|r| r.satisfied).count(),
        sizes,
        size,
        evals_to_first: evals,
        evals: ev,
        mean_coverage: (!covs.is_empty()).then(|| covs.iter().sum::<f64>() / covs.len() as f64),
        mean_distinct_sets: runs.iter().map(|r| r.distinct_sets as f64).sum::<f64>() / n,
        mean_evaluations: runs.iter().map(|r| r.evaluations_used as f64).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutSummary {
    pub dut_seed: u64,
    pub n_params: usize,
    pub clean_accuracy: f64,
    pub train_steps: usize,
    pub candidates: usize,
    pub concentration: BTreeMap<GroupRole, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub baseline_accuracy: f64,
    pub degradation_cutoff: f64,
    pub critical_singletons: usize,
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub dut: DutSummary,
    pub tau: f64,
    pub budget: u64,
    pub censored_size: usize,
    pub censored_evals: u64,
    pub oracle: Option<OracleSummary>,
    pub methods: Vec<MethodSummary>,
    /// Evaluations spent by the oracle and all searches.
    pub total_evaluations: u64,
    /// Sum of `evaluations_used` over executed searches plus oracle evaluations.
    pub accounted_evaluations: u64,
    pub dse: Option<DseReport>,
    #[serde(skip)]
    pub seeds: Vec<SeedRecord>,
}

impl CampaignReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

struct Timing {
    seed: u64,
    method: String,
    seconds: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Builds the DUT and oracle, runs RIFT and the configured baselines over all
/// seeds, and writes the reports under `out_dir`.
///
/// Files: `config.json`, `seeds/seed_<n>.json`, `aggregate.csv`,
/// `summary.json`, `timing.csv`, `critical_faults.json`, and when any RIFT
/// run succeeded `dse.json` and `dse.md`; with `uvm` set, `uvm/seed_<n>.sv`.
pub fn run_campaign(cfg: &CampaignConfig, out_dir: &Path) -> Result<CampaignReport> {
    let mut prep = prepare(cfg)?;
    let start_evals = thread_evaluations();
    mkdir(&out_dir.join("seeds"))?;
    write_json(&out_dir.join("config.json"), &CampaignConfig { tau: Some(prep.tau), ..cfg.clone() })?;

    let model = &mut prep.dut.model;
    let data = &prep.dut.data.rep;
    let oracle: Option<CriticalOracle> = if cfg.oracle {
        let o = build_critical_oracle_with(model, data, prep.tau, cfg.degradation_cutoff)?;
        log::info!("oracle: {} critical MSB singletons", o.critical_singletons.len());
        Some(o)
    } else {
        None
    };

    let mut methods = vec![Method::Rift];
    methods.extend(cfg.baselines.iter().copied());
    let mut timings = Vec::new();
    let mut accounted = oracle.as_ref().map_or(0, |o| o.evaluations);
    let mut cached: BTreeMap<Method, std::result::Result<SearchResult, String>> = BTreeMap::new();
    let mut records = Vec::with_capacity(cfg.n_seeds);
    for seed in cfg.seeds() {
        let mut rec = SeedRecord { seed, tau: prep.tau, results: Vec::new(), coverage: BTreeMap::new(), errors: BTreeMap::new() };
        for &m in &methods {
            let outcome = if let Some(c) = cached.get(&m) {
                c.clone()
            } else {
                let t = Instant::now();
                let r = run_method(m, model, data, &prep.cands, cfg, seed);
                timings.push(Timing { seed, method: m.to_string(), seconds: t.elapsed().as_secs_f64() });
                let r = r.map_err(|e| e.to_string());
                if let Ok(res) = &r {
                    accounted += res.evaluations_used;
                }
                if is_deterministic(m) {
                    cached.insert(m, r.clone());
                }
                r
            };
            match outcome {
                Ok(res) => {
                    let cov = oracle.as_ref().and_then(|o| coverage([&res], o));
                    rec.coverage.insert(m.to_string(), cov);
                    rec.results.push(res);
                }
                Err(e) => {
                    log::warn!("seed {seed}: {m} failed: {e}");
                    rec.errors.insert(m.to_string(), e);
                }
            }
        }
        if let Some(r) = rec.result("rift") {
            log::info!("seed {seed}: rift |F| {} satisfied {}", r.f_crit.len(), r.satisfied);
        }
        write_json(&out_dir.join("seeds").join(format!("seed_{seed}.json")), &rec)?;
        records.push(rec);
    }
    let total = thread_evaluations() - start_evals;

    let (cs, ce) = (cfg.censored_size(), cfg.censored_evals());
    let collect = |name: &str| -> (Vec<&SearchResult>, Vec<Option<f64>>) {
        let runs: Vec<&SearchResult> = records.iter().filter_map(|r| r.result(name)).collect();
        let cov = records.iter().filter(|r| r.result(name).is_some()).map(|r| r.coverage.get(name).copied().flatten()).collect();
        (runs, cov)
    };
    let mut summaries = Vec::new();
    let (rift_runs, rift_cov) = collect("rift");
    let rift = if rift_runs.is_empty() { None } else { Some(summarize_method("rift", &rift_runs, &rift_cov, None, cs, ce)?) };
    let reference = rift.as_ref().map(|r| {
        let s: Vec<f64> = r.sizes.iter().map(|&x| x as f64).collect();
        let e: Vec<f64> = r.evals_to_first.iter().map(|&x| x as f64).collect();
        (s, e)
    });
    if let Some(r) = rift.clone() {
        summaries.push(r);
    }
    for m in &cfg.baselines {
        let (runs, cov) = collect(m.as_str());
        if runs.is_empty() {
            continue;
        }
        let refs = reference.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
        summaries.push(summarize_method(m.as_str(), &runs, &cov, refs, cs, ce)?);
    }

    let mut critical: BTreeSet<_> = BTreeSet::new();
    for r in &rift_runs {
        if r.satisfied {
            critical.extend(r.f_crit.sites().iter().copied());
        }
    }
    let critical_set = FaultSet::from_sites(critical.into_iter().collect());
    critical_set.save(&out_dir.join("critical_faults.json"))?;
    let dse = if critical_set.is_empty() {
        None
    } else {
        let d = dse_report(model, critical_set.sites(), &cfg.dse)?;
        write_json(&out_dir.join("dse.json"), &d)?;
        fs::write(out_dir.join("dse.md"), d.to_markdown()).map_err(|e| Error::io(out_dir.join("dse.md"), e))?;
        Some(d)
    };

    if cfg.uvm {
        let dir = out_dir.join("uvm");
        mkdir(&dir)?;
        for rec in &records {
            if let Some(r) = rec.result("rift").filter(|r| r.satisfied) {
                let text = uvm::render_sequence(&r.f_crit, &format!("rift_seq_{}", rec.seed), &cfg.uvm_config_key)?;
                uvm::write_sequence(&dir.join(format!("seed_{}.sv", rec.seed)), &text)?;
            }
        }
    }

    let report = CampaignReport {
        dut: DutSummary {
            dut_seed: cfg.dut_seed,
            n_params: model.n_params(),
            clean_accuracy: prep.dut.report.clean_accuracy,
            train_steps: prep.dut.report.steps,
            candidates: prep.cands.k(),
            concentration: group_concentration(&prep.cands, model)?,
        },
        tau: prep.tau,
        budget: cfg.budget(),
        censored_size: cs,
        censored_evals: ce,
        oracle: oracle.as_ref().map(|o| OracleSummary {
            baseline_accuracy: o.baseline_accuracy,
            degradation_cutoff: o.degradation_cutoff,
            critical_singletons: o.critical_singletons.len(),
            evaluations: o.evaluations,
        }),
        methods: summaries,
        total_evaluations: total,
        accounted_evaluations: accounted,
        dse,
        seeds: records,
    };
    write_json(&out_dir.join("summary.json"), &report)?;
    write_aggregate_csv(&report, &out_dir.join("aggregate.csv"))?;
    write_timing_csv(&timings, &out_dir.join("timing.csv"))?;
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

fn write_aggregate_csv(report: &CampaignReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "runs",
        "satisfied",
        "mean_size",
        "sd_size",
        "ci95_lo",
        "ci95_hi",
        "welch_p_vs_rift",
        "cohens_d_vs_rift",
        "mean_evals_to_first",
        "sd_evals_to_first",
        "mean_coverage",
        "mean_distinct_sets",
        "mean_evaluations",
    ])?;
    for m in &report.methods {
        w.write_record([
            m.method.clone(),
            m.runs.to_string(),
            m.satisfied.to_string(),
            m.size.mean.to_string(),
            m.size.sd.to_string(),
            m.size.ci95_lo.to_string(),
            m.size.ci95_hi.to_string(),
            opt(m.size.welch_p),
            opt(m.size.cohens_d),
            m.evals.mean.to_string(),
            m.evals.sd.to_string(),
            opt(m.mean_coverage),
            m.mean_distinct_sets.to_string(),
            m.mean_evaluations.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_timing_csv(timings: &[Timing], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "method", "wall_seconds"])?;
    for t in timings {
        w.write_record([t.seed.to_string(), t.method.clone(), format!("{:.6}", t.seconds)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Path of the per-seed record written by [`run_campaign`].
pub fn seed_file(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join("seeds").join(format!("seed_{seed}.json"))
}

pub fn load_seed_record(path: &Path) -> Result<SeedRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json_parse("seed record", &e))
}
