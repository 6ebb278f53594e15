//! Runtime and memory of the search as the candidate count grows with the DUT.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{profile_for, CampaignConfig};
use crate::candidate::CandidateSet;
use crate::dut::{generate_task, init_weights, ArchConfig, QuantizedModel};
use crate::error::{Error, Result};
use crate::rl::run_search_with_stats;
use crate::stats::{linear_fit, power_law_fit, LinearFit, PowerFit};

/// `base` with width (and FFN width) scaled so the parameter count is as close
/// as possible to `target`. Widths stay multiples of the head count.
pub fn arch_for_params(base: &ArchConfig, target: usize) -> ArchConfig {
    let at = |w: usize| ArchConfig { width: w, ffn_hidden: w, ..base.clone() };
    let step = base.n_heads.max(1);
    let mut best = at(step);
    let mut w = step;
    loop {
        let a = at(w);
        if a.n_params().abs_diff(target) < best.n_params().abs_diff(target) {
            best = a.clone();
        }
        if a.n_params() >= target {
            return best;
        }
        w += step;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub k: usize,
    pub width: usize,
    pub n_params: usize,
    /// Profiling plus search.
    pub runtime_seconds: f64,
    /// Int8 weights, the candidate list and the Q-table.
    pub peak_memory_bytes: usize,
    pub evaluations: u64,
    pub q_states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityReport {
    pub rows: Vec<ScaleRow>,
    pub runtime_fit: Option<LinearFit>,
    pub memory_fit: Option<PowerFit>,
    pub notice: Option<String>,
}

/// For each `k`, builds a DUT of about `k / rho` parameters and times one
/// search over its top-`k` candidates at a fixed `E_max * T_max`.
///
/// The scaled DUTs are initialized but not trained: the cost of a search
/// does not depend on the weight values, and training the largest sizes
/// would dominate the sweep.
pub fn scalability_sweep(cfg: &CampaignConfig, k_grid: &[usize]) -> Result<ScalabilityReport> {
    cfg.validate()?;
    if k_grid.is_empty() || k_grid.contains(&0) {
        return Err(Error::InvalidArgument("k grid must hold positive sizes".into()));
    }
    let rl = cfg.rl_config();
    let mut rows = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let arch = arch_for_params(&cfg.dut.arch, (k as f64 / cfg.rho).round() as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.dut_seed);
        let w = init_weights(&arch, &mut rng);
        let mut model = QuantizedModel::from_flat(arch.clone(), cfg.dut_seed, &w)?;
        let data = generate_task(&arch, &cfg.dut.data, cfg.dut_seed)?.rep;
        if k > model.n_params() {
            return Err(Error::InvalidArgument(format!("k {k} exceeds the {} parameters", model.n_params())));
        }
        let t = Instant::now();
        let profile = profile_for(cfg, &model, &data, cfg.alpha)?;
        let cands = CandidateSet::from_indices(profile.ranking[..k].to_vec(), k as f64 / model.n_params() as f64)?;
        let (res, stats) = run_search_with_stats(&mut model, &data, &cands, &rl, cfg.seed)?;
        let runtime_seconds = t.elapsed().as_secs_f64();
        let peak_memory_bytes = model.n_params() + k * std::mem::size_of::<usize>() + stats.q_bytes;
        log::info!("k {k}: {} params, {runtime_seconds:.2} s", model.n_params());
        rows.push(ScaleRow {
            k,
            width: arch.width,
            n_params: model.n_params(),
            runtime_seconds,
            peak_memory_bytes,
            evaluations: res.evaluations_used,
            q_states: stats.q_states,
        });
    }
    let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let (runtime_fit, memory_fit, notice) = if rows.len() < 2 {
        (None, None, Some("a single grid point: fits skipped".to_string()))
    } else {
        let rt: Vec<f64> = rows.iter().map(|r| r.runtime_seconds).collect();
        let mem: Vec<f64> = rows.iter().map(|r| r.peak_memory_bytes as f64).collect();
        (Some(linear_fit(&ks, &rt)?), Some(power_law_fit(&ks, &mem)?), None)
    };
    Ok(ScalabilityReport { rows, runtime_fit, memory_fit, notice })
}

pub fn write_scale_csv<W: Write>(report: &ScalabilityReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "width", "n_params", "runtime_seconds", "peak_memory_bytes", "evaluations", "q_states"])?;
    for r in &report.rows {
        w.write_record([
            r.k.to_string(),
            r.width.to_string(),
            r.n_params.to_string(),
            format!("{:.6}", r.runtime_seconds),
            r.peak_memory_bytes.to_string(),
            r.evaluations.to_string(),
            r.q_states.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
