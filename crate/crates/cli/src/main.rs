use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use rift_core::baselines::Method;
use rift_core::campaign::{self, CampaignConfig, Prepared};
use rift_core::candidate::{group_concentration, select_candidates};
use rift_core::dse::{dse_report, reference_report};
use rift_core::uvm::{self, UvmGenSpec};
use rift_core::{FaultSet, GroupRole};

#[derive(Parser)]
#[command(name = "rift", version, about = "Sensitivity-guided RL search for critical bit-flip sets")]
struct Cli {
    /// Campaign configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base search seed; overrides the config and RIFT_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (for gen-uvm: the output file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print a single JSON document on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train and quantize the DUT and save it as JSON.
    BuildDut,
    /// Write per-parameter hybrid sensitivity scores.
    Profile {
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Select the candidate parameters.
    Select {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Run one RL search.
    Search {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
    },
    /// Run one comparison method: rfi, magnitude, gradient or evolutionary.
    Baseline { name: String },
    /// Run the full multi-seed comparison.
    Campaign,
    /// Protection-scheme comparison, against a fault list or the reference inputs.
    Dse {
        #[arg(long)]
        faults: Option<PathBuf>,
    },
    /// Generate a UVM sequence from a fault list.
    GenUvm {
        #[arg(long)]
        faults: PathBuf,
        #[arg(long, default_value = "rift_seq")]
        name: String,
        #[arg(long, default_value = uvm::DEFAULT_CONFIG_KEY)]
        key: String,
    },
    /// Ablation studies.
    Ablate {
        #[command(subcommand)]
        which: Ablation,
    },
    /// Runtime and memory against the candidate count.
    Scale {
        #[arg(long, value_delimiter = ',', default_values_t = [100, 200, 400, 800])]
        k: Vec<usize>,
    },
}

#[derive(Subcommand)]
enum Ablation {
    Alpha {
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75, 1.0])]
        grid: Vec<f64>,
    },
    RlOnly,
    RlParams {
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.7, 0.9, 0.99])]
        gammas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2, 0.3])]
        epsilons: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<CampaignConfig> {
    let mut cfg = match &cli.config {
        Some(p) => CampaignConfig::load(p)?,
        None => CampaignConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("rift-out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit<T: Serialize>(cli: &Cli, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    if cli.json {
        put(&(serde_json::to_string_pretty(value)? + "\n"))
    } else {
        put(&text())
    }
}

// A closed pipe (`rift ... | head`) is not an error.
fn put(s: &str) -> Result<()> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(s.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn with_overrides(mut cfg: CampaignConfig, alpha: Option<f64>, rho: Option<f64>) -> Result<CampaignConfig> {
    if let Some(a) = alpha {
        cfg.alpha = a;
    }
    if let Some(r) = rho {
        cfg.rho = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::BuildDut => {
            let cfg = load_config(cli)?;
            let dut = rift_core::build_dut(&cfg.dut, cfg.dut_seed)?;
            let dir = out_dir(cli)?;
            dut.model.save(&dir.join("dut.json"))?;
            let v = json!({
                "dut_seed": cfg.dut_seed,
                "n_params": dut.model.n_params(),
                "clean_accuracy": dut.report.clean_accuracy,
                "train_steps": dut.report.steps,
                "model": dir.join("dut.json"),
            });
            emit(cli, &v, || {
                format!(
                    "DUT: {} params, clean accuracy {:.4} after {} steps -> {}\n",
                    dut.model.n_params(),
                    dut.report.clean_accuracy,
                    dut.report.steps,
                    dir.join("dut.json").display()
                )
            })
        }
        Cmd::Profile { alpha } => {
            let cfg = with_overrides(load_config(cli)?, *alpha, None)?;
            let prep = campaign::prepare(&cfg)?;
            let dir = out_dir(cli)?;
            let path = dir.join("profile.csv");
            let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            prep.profile.write_csv(&prep.dut.model, std::io::BufWriter::new(f))?;
            let top: Vec<_> = prep.profile.ranking.iter().take(10).map(|&i| top_entry(&prep, i)).collect();
            let v = json!({ "alpha": cfg.alpha, "n_params": prep.profile.n_params(), "top": top, "csv": path });
            emit(cli, &v, || {
                let mut s = format!("alpha {}: {} scores -> {}\n", cfg.alpha, prep.profile.n_params(), path.display());
                for t in &top {
                    s += &format!("  {} {} {:.4e}\n", t["param_index"], t["group"], t["score"].as_f64().unwrap_or(0.0));
                }
                s
            })
        }
        Cmd::Select { alpha, rho } => {
            let cfg = with_overrides(load_config(cli)?, *alpha, *rho)?;
            let prep = campaign::prepare(&cfg)?;
            let cands = select_candidates(&prep.profile, cfg.rho)?;
            let conc = group_concentration(&cands, &prep.dut.model)?;
            let dir = out_dir(cli)?;
            write(&dir.join("candidates.json"), &serde_json::to_string_pretty(&cands)?)?;
            let v = json!({ "k": cands.k(), "rho": cfg.rho, "concentration": conc, "indices": cands.indices });
            emit(cli, &v, || {
                let mut s = format!("{} candidates (rho {})\n", cands.k(), cfg.rho);
                for (g, f) in conc.iter().filter(|(_, &f)| f > 0.0) {
                    s += &format!("  {g}: {:.0}%\n", 100.0 * f);
                }
                s
            })
        }
        Cmd::Search { alpha, rho } => {
            let cfg = with_overrides(load_config(cli)?, *alpha, *rho)?;
            let mut prep = campaign::prepare(&cfg)?;
            let res = campaign::run_method(Method::Rift, &mut prep.dut.model, &prep.dut.data.rep, &prep.cands, &cfg, cfg.seed)?;
            report_search(cli, &cfg, &prep, &res)
        }
        Cmd::Baseline { name } => {
            let method = Method::parse(name).filter(|m| *m != Method::Rift);
            let Some(method) = method else {
                bail!("unknown baseline `{name}` (expected rfi, magnitude, gradient or evolutionary)");
            };
            let cfg = load_config(cli)?;
            let mut prep = campaign::prepare(&cfg)?;
            let res = campaign::run_method(method, &mut prep.dut.model, &prep.dut.data.rep, &prep.cands, &cfg, cfg.seed)?;
            report_search(cli, &cfg, &prep, &res)
        }
        Cmd::Campaign => {
            let cfg = load_config(cli)?;
            let dir = out_dir(cli)?;
            let rep = campaign::run_campaign(&cfg, &dir)?;
            emit(cli, &rep, || {
                let mut s = format!(
                    "tau {:.4}, budget {} evaluations per method, {} seeds -> {}\n",
                    rep.tau,
                    rep.budget,
                    cfg.n_seeds,
                    dir.display()
                );
                if let Some(o) = &rep.oracle {
                    s += &format!("oracle: {} critical MSB singletons\n", o.critical_singletons);
                }
                s += "method         satisfied  mean|F|   evals-to-first  coverage\n";
                for m in &rep.methods {
                    let cov = m.mean_coverage.map_or("--".to_string(), |c| format!("{c:.3}"));
                    s += &format!(
                        "{:<14} {:>4}/{:<4} {:>8.2} {:>16.1}  {cov}\n",
                        m.method, m.satisfied, m.runs, m.size.mean, m.evals.mean
                    );
                }
                if let Some(d) = &rep.dse {
                    s += "\n";
                    s += &d.to_markdown();
                }
                s
            })
        }
        Cmd::Dse { faults } => {
            let report = match faults {
                Some(p) => {
                    let cfg = load_config(cli)?;
                    let f = FaultSet::load(p)?;
                    let dut = rift_core::build_dut(&cfg.dut, cfg.dut_seed)?;
                    dse_report(&dut.model, f.sites(), &cfg.dse)?
                }
                None => reference_report(),
            };
            emit(cli, &report, || report.to_markdown())
        }
        Cmd::GenUvm { faults, name, key } => {
            let spec = UvmGenSpec {
                fault_file: faults.clone(),
                sequence_name: name.clone(),
                agent_config_key: key.clone(),
                output_path: cli.out.clone(),
            };
            let text = uvm::generate_sequence(&spec)?;
            let n = uvm::extract_faults(&text)?.len();
            let v = json!({ "sequence": name, "faults": n, "output": cli.out });
            if cli.json {
                emit(cli, &v, String::new)
            } else if cli.out.is_none() {
                put(&text)
            } else {
                eprintln!("wrote {} ({n} faults)", cli.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
                Ok(())
            }
        }
        Cmd::Ablate { which } => {
            let cfg = load_config(cli)?;
            let dir = out_dir(cli)?;
            match which {
                Ablation::Alpha { grid } => {
                    let rows = campaign::ablation_alpha(&cfg, grid)?;
                    let mut buf = Vec::new();
                    campaign::write_alpha_csv(&rows, &mut buf)?;
                    write(&dir.join("ablation_alpha.csv"), &String::from_utf8(buf.clone())?)?;
                    emit(cli, &rows, || String::from_utf8(buf).unwrap_or_default())
                }
                Ablation::RlOnly => {
                    let rep = campaign::ablation_rl_only(&cfg)?;
                    write(&dir.join("ablation_rl_only.json"), &serde_json::to_string_pretty(&rep)?)?;
                    emit(cli, &rep, || {
                        let line = |a: &campaign::ArmSummary| {
                            format!(
                                "{:<9} {:>3}/{:<3} mean|F| {:>6.2}  convergence episode {}\n",
                                a.name,
                                a.satisfied,
                                a.runs,
                                a.mean_size,
                                a.mean_convergence_episode.map_or("--".into(), |e| format!("{e:.1}"))
                            )
                        };
                        format!("{}{}size ratio {:.2}\n", line(&rep.complete), line(&rep.rl_only), rep.size_ratio)
                    })
                }
                Ablation::RlParams { gammas, epsilons } => {
                    let rows = campaign::ablation_rl_params(&cfg, gammas, epsilons)?;
                    let mut buf = Vec::new();
                    campaign::write_rl_params_csv(&rows, &mut buf)?;
                    write(&dir.join("ablation_rl_params.csv"), &String::from_utf8(buf.clone())?)?;
                    emit(cli, &rows, || String::from_utf8(buf).unwrap_or_default())
                }
            }
        }
        Cmd::Scale { k } => {
            let cfg = load_config(cli)?;
            let dir = out_dir(cli)?;
            let rep = campaign::scalability_sweep(&cfg, k)?;
            let mut buf = Vec::new();
            campaign::write_scale_csv(&rep, &mut buf)?;
            write(&dir.join("scale.csv"), &String::from_utf8(buf.clone())?)?;
            emit(cli, &rep, || {
                let mut s = String::from_utf8(buf).unwrap_or_default();
                if let Some(f) = rep.runtime_fit {
                    s += &format!("runtime ~ k: slope {:.4e} s, R^2 {:.4}\n", f.slope, f.r2);
                }
                if let Some(f) = rep.memory_fit {
                    s += &format!("memory ~ k^{:.3} (R^2 {:.4})\n", f.exponent, f.r2);
                }
                if let Some(n) = &rep.notice {
                    s += &format!("{n}\n");
                }
                s
            })
        }
    }
}

fn top_entry(prep: &Prepared, i: usize) -> serde_json::Value {
    let g = prep.dut.model.role_of(i).map(GroupRole::as_str).unwrap_or("?");
    json!({ "param_index": i, "group": g, "score": prep.profile.scores[i] })
}

fn report_search(cli: &Cli, cfg: &CampaignConfig, prep: &Prepared, res: &rift_core::SearchResult) -> Result<()> {
    let dir = out_dir(cli)?;
    write(&dir.join(format!("{}.json", res.method)), &(serde_json::to_string_pretty(res)? + "\n"))?;
    res.f_crit.save(&dir.join(format!("{}_f_crit.json", res.method)))?;
    let replay = campaign::replay_accuracy(&prep.dut.model, &prep.dut.data.rep, &res.f_crit)?;
    let v = json!({
        "method": res.method,
        "seed": cfg.seed,
        "tau": prep.tau,
        "satisfied": res.satisfied,
        "f_crit": res.f_crit,
        "final_accuracy": res.final_accuracy,
        "replay_accuracy": replay,
        "evaluations_used": res.evaluations_used,
        "first_satisfying_eval": res.first_satisfying_eval,
    });
    emit(cli, &v, || {
        format!(
            "{} (seed {}): |F| {} accuracy {:.4} (tau {:.4}, {}) after {} evaluations\n",
            res.method,
            cfg.seed,
            res.f_crit.len(),
            res.final_accuracy,
            prep.tau,
            if res.satisfied { "met" } else { "not met" },
            res.evaluations_used
        )
    })
}
