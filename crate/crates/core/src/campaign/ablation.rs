//! Ablations: the hybrid weight α, RL without profiling, and RL hyperparameters.

use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{prepare, profile_for, CampaignConfig};
use crate::candidate::{select_candidates, CandidateSet};
use crate::error::{Error, Result};
use crate::rl::{convergence_episode, run_search, RlConfig};
use crate::search::SearchResult;
use crate::stats::{mean, sd};

fn size_stats(sizes: &[usize]) -> (f64, f64) {
    let f: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let s = if f.len() >= 2 { sd(&f) } else { 0.0 };
    (mean(&f), s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub runs: usize,
    pub satisfied: usize,
    /// Censored like the campaign aggregates.
    pub sizes: Vec<usize>,
    pub mean_size: f64,
    pub sd_size: f64,
}

/// Full pipeline at each α over the same seeds.
pub fn ablation_alpha(cfg: &CampaignConfig, grid: &[f64]) -> Result<Vec<AlphaRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("alpha grid is empty".into()));
    }
    let mut prep = prepare(cfg)?;
    let rl = cfg.rl_config();
    let mut rows = Vec::with_capacity(grid.len());
    for &alpha in grid {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
        }
        let profile = profile_for(cfg, &prep.dut.model, &prep.dut.data.rep, alpha)?;
        let cands = select_candidates(&profile, cfg.rho)?;
        let mut sizes = Vec::new();
        let mut satisfied = 0;
        for seed in cfg.seeds() {
            let r = run_search(&mut prep.dut.model, &prep.dut.data.rep, &cands, &rl, seed)?;
            satisfied += usize::from(r.satisfied);
            sizes.push(r.effective_size(cfg.censored_size()));
        }
        let (mean_size, sd_size) = size_stats(&sizes);
        log::info!("alpha {alpha}: mean |F| {mean_size:.2}, {satisfied}/{} satisfied", sizes.len());
        rows.push(AlphaRow { alpha, runs: sizes.len(), satisfied, sizes, mean_size, sd_size });
    }
    Ok(rows)
}

pub fn write_alpha_csv<W: Write>(rows: &[AlphaRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "runs", "satisfied", "mean_size", "sd_size"])?;
    for r in rows {
        w.write_record([r.alpha.to_string(), r.runs.to_string(), r.satisfied.to_string(), r.mean_size.to_string(), r.sd_size.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub runs: usize,
    pub satisfied: usize,
    pub sizes: Vec<usize>,
    /// Mean censored `|F_crit|`, the number of critical faults reported.
    pub mean_size: f64,
    pub sd_size: f64,
    pub mean_evals_to_first: f64,
    /// Per-seed first episode within 1% of the final best reward.
    pub convergence_episodes: Vec<Option<usize>>,
    pub mean_convergence_episode: Option<f64>,
}

fn arm(name: &str, runs: &[SearchResult], cfg: &CampaignConfig) -> ArmSummary {
    let sizes: Vec<usize> = runs.iter().map(|r| r.effective_size(cfg.censored_size())).collect();
    let (mean_size, sd_size) = size_stats(&sizes);
    let evals: Vec<f64> = runs.iter().map(|r| r.effective_evals_to_first(cfg.censored_evals()) as f64).collect();
    let conv: Vec<Option<usize>> = runs.iter().map(|r| convergence_episode(&r.episode_best)).collect();
    let got: Vec<f64> = conv.iter().flatten().map(|&e| e as f64).collect();
    ArmSummary {
        name: name.to_string(),
        runs: runs.len(),
        satisfied: runs.iter().filter(|r| r.satisfied).count(),
        sizes,
        mean_size,
        sd_size,
        mean_evals_to_first: mean(&evals),
        convergence_episodes: conv,
        mean_convergence_episode: (!got.is_empty()).then(|| mean(&got)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlOnlyReport {
    pub complete: ArmSummary,
    pub rl_only: ArmSummary,
    /// `rl_only.mean_size / complete.mean_size`.
    pub size_ratio: f64,
}

/// The candidates of an RL-only arm: `k` parameters drawn uniformly, per seed.
pub fn random_candidates(n_params: usize, k: usize, seed: u64) -> Result<CandidateSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    CandidateSet::from_indices(index::sample(&mut rng, n_params, k).into_vec(), k as f64 / n_params as f64)
}

/// Complete pipeline against the same RL search on random candidates of equal size.
pub fn ablation_rl_only(cfg: &CampaignConfig) -> Result<RlOnlyReport> {
    let mut prep = prepare(cfg)?;
    let rl = cfg.rl_config();
    let n = prep.dut.model.n_params();
    let (mut full, mut random) = (Vec::new(), Vec::new());
    for seed in cfg.seeds() {
        full.push(run_search(&mut prep.dut.model, &prep.dut.data.rep, &prep.cands, &rl, seed)?);
        let cands = random_candidates(n, prep.cands.k(), seed)?;
        random.push(run_search(&mut prep.dut.model, &prep.dut.data.rep, &cands, &rl, seed)?);
    }
    let complete = arm("complete", &full, cfg);
    let rl_only = arm("rl_only", &random, cfg);
    let size_ratio = rl_only.mean_size / complete.mean_size;
    Ok(RlOnlyReport { complete, rl_only, size_ratio })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlParamRow {
    pub gamma: f64,
    pub epsilon: f64,
    pub runs: usize,
    pub satisfied: usize,
    pub mean_size: f64,
    pub sd_size: f64,
    pub mean_convergence_episode: Option<f64>,
}

/// RIFT over the grid of discount factors and exploration rates.
pub fn ablation_rl_params(cfg: &CampaignConfig, gammas: &[f64], epsilons: &[f64]) -> Result<Vec<RlParamRow>> {
    if gammas.is_empty() || epsilons.is_empty() {
        return Err(Error::InvalidArgument("gamma and epsilon grids must be non-empty".into()));
    }
    let mut prep = prepare(cfg)?;
    let mut rows = Vec::new();
    for &gamma in gammas {
        for &epsilon in epsilons {
            let rl = RlConfig { gamma, epsilon, ..cfg.rl_config() };
            rl.validate()?;
            let mut runs = Vec::new();
            for seed in cfg.seeds() {
                runs.push(run_search(&mut prep.dut.model, &prep.dut.data.rep, &prep.cands, &rl, seed)?);
            }
            let a = arm("rift", &runs, cfg);
            rows.push(RlParamRow {
                gamma,
                epsilon,
                runs: a.runs,
                satisfied: a.satisfied,
                mean_size: a.mean_size,
                sd_size: a.sd_size,
                mean_convergence_episode: a.mean_convergence_episode,
            });
        }
    }
    Ok(rows)
}

pub fn write_rl_params_csv<W: Write>(rows: &[RlParamRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma", "epsilon", "runs", "satisfied", "mean_size", "sd_size", "mean_convergence_episode"])?;
    for r in rows {
        w.write_record([
            r.gamma.to_string(),
            r.epsilon.to_string(),
            r.runs.to_string(),
            r.satisfied.to_string(),
            r.mean_size.to_string(),
            r.sd_size.to_string(),
            r.mean_convergence_episode.map_or(String::new(), |e| e.to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
