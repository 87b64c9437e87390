//! `ood`: run OOD-detection experiments and compare their reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ood_core::corpus::SyntheticCorpus;
use ood_core::harness::{compare, run};
use ood_core::{Error, ExperimentConfig, ExperimentReport, Mode, Result};

#[derive(Parser)]
#[command(
    name = "ood",
    version,
    about = "Entropy-regularized intent classifiers and max-softmax OOD detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, score and evaluate one experiment.
    ///
    /// Flags override the matching fields of `--config`; without a config
    /// every other field takes its default.
    Run {
        /// JSON experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// baseline, entropy-oos or entropy-pog.
        #[arg(long)]
        mode: Option<Mode>,
        /// CLINC150-format `data_full.json`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-metric differences `b - a` of two runs in percentage points.
    Compare {
        /// `report.json` or the run directory holding it.
        a: PathBuf,
        b: PathBuf,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write the built-in synthetic corpus in CLINC150 format.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the default experiment config as JSON.
    Config {
        #[arg(long, default_value_t = Mode::Baseline)]
        mode: Mode,
    },
}

fn report_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("report.json")
    } else {
        p.to_path_buf()
    }
}

fn run_command(
    config: Option<PathBuf>,
    mode: Option<Mode>,
    data: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(mode) = mode {
        cfg.mode = mode;
    }
    if data.is_some() {
        cfg.data = data;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if out.is_some() {
        cfg.output = out;
    }
    let dir = cfg
        .output
        .clone()
        .ok_or_else(|| Error::Config("no output directory given (use --out)".into()))?;
    log::info!("running {} with seed {}", cfg.mode, cfg.seed);
    let report = run(&cfg)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let m = report.metrics.percent;
    println!("mode                {}", report.mode);
    println!("ind_test_accuracy   {:.2}", report.ind_test_accuracy * 100.0);
    for (name, v) in m.fields() {
        println!("{name:<19} {v:.2}");
    }
    if report.fallback_to_baseline {
        println!("fallback_to_baseline true");
    }
    println!("output              {}", dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            mode,
            data,
            seed,
            out,
        } => run_command(config, mode, data, seed, out),
        Command::Compare { a, b, json } => {
            let ra = ExperimentReport::load(report_path(&a))?;
            let rb = ExperimentReport::load(report_path(&b))?;
            let cmp = compare(&ra, &rb)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&cmp)?);
            } else {
                print!("{}", cmp.to_table());
            }
            Ok(())
        }
        Command::Synth { out, seed } => {
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|source| Error::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            SyntheticCorpus {
                seed,
                ..SyntheticCorpus::default()
            }
            .write(&out)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Config { mode } => {
            let cfg = ExperimentConfig {
                mode,
                ..ExperimentConfig::default()
            };
            println!("{}", cfg.to_json()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
