//! `hidepet` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hidepet::backbone::save_checkpoint;
use hidepet::config::ExperimentConfig;
use hidepet::harness::experiment::{obtain_checkpoint, read_records, run_experiment, Mode};
use hidepet::harness::metrics::AccuracyMatrix;
use hidepet::harness::report::{calibrate_lambda, lambda_sweep, report, stream_refs, sweep_csv};
use hidepet::harness::stream::{make_mixed_stream, StreamConfig};
use hidepet::hide::Ladder;
use hidepet::theory::{self, LossMode, Theorem};

#[derive(Parser)]
#[command(name = "hidepet", version, about = "Hierarchical PET continual learning on a frozen backbone")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunMode {
    /// The configured ladder rung.
    Run,
    /// Every representation recovery strategy and the no-recovery control.
    Recovery,
    /// Shared-set update strategies, reporting TII accuracy.
    Strategies,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pre-train a backbone and save the checkpoint.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured method for each seed.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Single seed overriding the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "run")]
        mode: RunMode,
    },
    /// Run several ladder rungs on shared representations.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated rungs (naive, wtp, wtp+tii, wtp+tap, full) or `all`.
        #[arg(long, default_value = "all")]
        components: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pool of shared sets versus one shared set on the mixed stream.
    Aka {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lambda_ood: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only sweep the threshold: pool size per λ for each seed, no training.
        #[arg(long)]
        sweep: bool,
    },
    /// Monte-Carlo check of a decomposition bound.
    Theory {
        /// 1, 2, 3 (both directions), dil, til, ood-suff, ood-nec or all.
        #[arg(long)]
        theorem: String,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Per-sample hypotheses and loss instead of expectations.
        #[arg(long)]
        pointwise: bool,
        /// Directory for slack histogram CSVs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics of an accuracy matrix CSV.
    Metrics {
        matrix: PathBuf,
        #[arg(long)]
        literal_ala: bool,
    },
    /// Summary tables of a records file.
    Report {
        records: PathBuf,
        /// Directory for summary.csv and series.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: Option<&Path>, mixed: bool) -> Result<ExperimentConfig> {
    match config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None if mixed => Ok(ExperimentConfig::mixed()),
        None => Ok(ExperimentConfig::quick()),
    }
}

fn execute(mut cfg: ExperimentConfig, seed: Option<u64>, out: Option<&Path>, mode: Mode) -> Result<()> {
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let dir = cfg.out_root(out);
    let recs = run_experiment(&cfg, &mode, &dir)?;
    if mode == Mode::Aka {
        let mut log = String::new();
        for r in &recs {
            for d in r.decisions.iter().flatten() {
                log.push_str(&serde_json::to_string(&serde_json::json!({ "seed": r.seed, "decision": d }))?);
                log.push('\n');
            }
        }
        fs::write(dir.join("decisions.jsonl"), log)?;
    }
    print!("{}", report(&recs)?.summary_csv);
    eprintln!("records appended to {}", dir.join("records.jsonl").display());
    Ok(())
}

/// Pool size over a λ grid for each seed of the mixed stream, and the
/// midpoint of the widest window giving exactly two sets on every seed.
fn sweep(mut cfg: ExperimentConfig, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let dir = cfg.out_root(out);
    fs::create_dir_all(&dir)?;
    let (theta, _) = obtain_checkpoint(&cfg)?;
    let grid: Vec<f64> = (0..=120).map(|i| 0.4 + i as f64 * 0.01).collect();
    let mut streams = Vec::new();
    for &s in &cfg.seeds {
        let stream = make_mixed_stream(&StreamConfig { seed: s, ..cfg.stream.clone() })?;
        let (plains, refs) = stream_refs(&theta, &stream, s)?;
        fs::write(dir.join(format!("sweep_seed{s}.csv")), sweep_csv(&lambda_sweep(&plains, &refs, &grid)?))?;
        streams.push((plains, refs));
    }
    match calibrate_lambda(&streams, &grid, 2)? {
        Some(l) => println!("calibrated lambda_ood {l:.4}"),
        None => println!("no threshold gives two sets on every seed"),
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Pretrain { config, out } => {
            let mut cfg = load(config.as_deref(), false)?;
            cfg.checkpoint = None;
            let (ck, rep) = obtain_checkpoint(&cfg)?;
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            save_checkpoint(&ck, &out)?;
            println!("{}", serde_json::to_string(&rep)?);
        }
        Cmd::Run { config, seed, out, mode } => {
            let m = match mode {
                RunMode::Run => Mode::Run,
                RunMode::Recovery => Mode::Recovery,
                RunMode::Strategies => Mode::Strategies,
            };
            execute(load(config.as_deref(), false)?, seed, out.as_deref(), m)?;
        }
        Cmd::Ablate { config, components, seed, out } => {
            let rungs = if components == "all" {
                Ladder::all().to_vec()
            } else {
                components.split(',').map(|c| Ladder::parse(c.trim())).collect::<hidepet::Result<Vec<_>>>()?
            };
            execute(load(config.as_deref(), false)?, seed, out.as_deref(), Mode::Ablate(rungs))?;
        }
        Cmd::Aka { config, lambda_ood, seed, out, sweep: only_sweep } => {
            let mut cfg = load(config.as_deref(), true)?;
            if let Some(l) = lambda_ood {
                cfg.aka.lambda_ood = l;
            }
            if only_sweep {
                sweep(cfg, seed, out.as_deref())?;
            } else {
                execute(cfg, seed, out.as_deref(), Mode::Aka)?;
            }
        }
        Cmd::Theory { theorem, n, seed, pointwise, out } => {
            let mode = if pointwise { LossMode::Pointwise } else { LossMode::Expectation };
            let mut failed = false;
            for t in Theorem::parse_group(&theorem)? {
                let r = theory::run(t, n, seed, mode)?;
                println!("{}", r.summary());
                if let Some(case) = &r.first_violation {
                    println!("first violation: {}", serde_json::to_string(case)?);
                }
                if let Some(dir) = &out {
                    fs::create_dir_all(dir)?;
                    fs::write(dir.join(format!("slack_{}.csv", t.tag())), r.histogram_csv())?;
                }
                failed |= !r.passed();
            }
            if failed {
                bail!("bound check failed");
            }
        }
        Cmd::Metrics { matrix, literal_ala } => {
            let m = AccuracyMatrix::parse_csv(&fs::read_to_string(&matrix)?)?;
            println!("{}", serde_json::to_string_pretty(&m.metrics(literal_ala)?)?);
        }
        Cmd::Report { records, out } => {
            let r = report(&read_records(&records)?)?;
            print!("{}", r.summary_csv);
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("summary.csv"), &r.summary_csv)?;
                fs::write(dir.join("series.csv"), &r.series_csv)?;
            }
        }
    }
    Ok(())
}
