use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use nfmppi::harness::{self, BenchmarkRequest, Config};
use nfmppi::mppi::RunLog;
use nfmppi::sampling::SamplerKind;
use nfmppi::scenario::{save_scenario, Scenario};
use nfmppi::trainingdata::Provenance;

#[derive(Parser)]
#[command(name = "nfmppi", version, about = "Sampling-based trajectory planning with learned input samplers")]
struct Cli {
    /// Configuration file (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a training set and fit one flow model.
    TrainFlow {
        /// Dataset generator: a2df or ail.
        #[arg(long)]
        kind: Provenance,
        /// Input channel: 1 = steering rate, 2 = acceleration.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        channel: u8,
        /// Dataset seed (defaults to the configured one).
        #[arg(long)]
        seed: Option<u64>,
        /// Model file; the loss curve goes next to it as `.loss.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// One closed-loop run, written as JSON lines.
    Run {
        /// Built-in id (static:1..3, dynamic:1..3) or scenario file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        sampler: SamplerKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory holding flow models; missing ones are trained and stored there.
        #[arg(long)]
        flows: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated runs for every scenario and sampler; writes <out>.csv and <out>.json.
    Benchmark {
        /// Repeatable; defaults to the configured list.
        #[arg(long)]
        scenario: Vec<String>,
        /// Repeatable; defaults to the configured list.
        #[arg(long)]
        sampler: Vec<SamplerKind>,
        #[arg(long)]
        runs: Option<usize>,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        flows: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Driven trajectory of a run log as CSV (t, s_x, s_y, v, psi).
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a built-in scenario to a TOML file.
    Scenario {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the default configuration.
    Config {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::TrainFlow { kind, channel, seed, out } => {
            let t = harness::cmd_train_flow(&cfg, kind, channel, seed)?;
            let csv = harness::save_trained(&t, &out)?;
            println!(
                "wrote {} and {} (best step {}, test NLL {:.4} -> {:.4})",
                out.display(),
                csv.display(),
                t.best_step,
                t.curve.initial_test().unwrap_or(f64::NAN),
                t.curve.best_test().unwrap_or(f64::NAN)
            );
        }
        Cmd::Run { scenario, sampler, seed, flows, out } => {
            let sc = Scenario::resolve(&scenario)?;
            let s = harness::build_sampler(&cfg, sampler, flows.as_deref())?;
            let log = harness::cmd_run(&cfg, &sc, &s, seed)?;
            log.write_jsonl(&out)?;
            let sum = &log.summary;
            println!(
                "{} steps, mean S {:.3}, min d_e {:.3}, log {}",
                sum.steps,
                sum.mean_total,
                sum.min_d_e,
                out.display()
            );
            if let Some(reason) = &sum.aborted {
                bail!("run aborted: {reason}");
            }
        }
        Cmd::Benchmark { scenario, sampler, runs, seed, flows, out } => {
            let req = BenchmarkRequest {
                scenarios: scenario,
                samplers: sampler,
                runs,
                master_seed: seed,
                flow_dir: flows,
            };
            let report = harness::cmd_benchmark(&cfg, &req)?;
            let (csv, json) = report.write(&out)?;
            print!("{}", report.to_csv());
            println!("wrote {} and {}", csv.display(), json.display());
        }
        Cmd::Export { run, out } => {
            let text = std::fs::read_to_string(&run).with_context(|| format!("reading {}", run.display()))?;
            let log = RunLog::from_jsonl(&text)?;
            std::fs::write(&out, harness::cmd_export_spatial(&log)).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} rows to {}", log.records.len(), out.display());
        }
        Cmd::Scenario { scenario, out } => {
            save_scenario(&Scenario::resolve(&scenario)?, &out)?;
            println!("wrote {}", out.display());
        }
        Cmd::Config { out } => {
            std::fs::write(&out, cfg.to_toml()).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
