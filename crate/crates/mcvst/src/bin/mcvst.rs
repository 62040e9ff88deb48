//! Command-line front end: simulate, sweep, coverage, codec-selftest.
//!
//! Any failure exits nonzero after printing one machine-readable
//! `mcvst-error: ...` line per problem on stderr.

use clap::{Args, Parser, Subcommand};
use mcvst::config::{
    codec_selftest, coverage_report, parse_config, render_csv, run_simulate, run_sweep,
    ExperimentConfig,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mcvst", about = "Deterministic MIMO-OFDM semantic-link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Config file (section.key = value lines); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed override (highest precedence; MCVST_SEED beats the file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Frames per GoP override.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one GoP at the configured SNR and write per-frame CSV.
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Single SNR override in dB.
        #[arg(long)]
        snr_db: Option<f64>,
    },
    /// Run the SNR x seed grid and write the aggregate CSV.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated SNR list override in dB.
        #[arg(long, value_delimiter = ',')]
        snr_db: Option<Vec<f64>>,
    },
    /// Print the subcarrier sampling schedule audit.
    Coverage {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Entropy-codec round-trip and rate-consistency self-test.
    CodecSelftest {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("mcvst-error: {msg}");
    ExitCode::FAILURE
}

fn load_config(common: &CommonOpts) -> Result<ExperimentConfig, ExitCode> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| fail(format_args!("cannot read {}: {e}", path.display())))?;
            match parse_config(&text) {
                Ok(cfg) => cfg,
                Err(errors) => {
                    for e in &errors {
                        eprintln!("mcvst-error: {}: {e}", path.display());
                    }
                    return Err(ExitCode::FAILURE);
                }
            }
        }
        None => ExperimentConfig::default(),
    };
    if let Ok(v) = std::env::var("MCVST_SEED") {
        cfg.pipeline.seed = v
            .parse()
            .map_err(|_| fail(format_args!("MCVST_SEED must be an integer, got '{v}'")))?;
    }
    if let Some(seed) = common.seed {
        cfg.pipeline.seed = seed;
    }
    if let Some(frames) = common.frames {
        cfg.sweep.frames = frames;
    }
    if let Some(out) = &common.out {
        cfg.io.out = Some(out.display().to_string());
    }
    cfg.validate().map_err(fail)?;
    Ok(cfg)
}

fn emit(cfg: &ExperimentConfig, text: &str) -> Result<(), ExitCode> {
    match &cfg.io.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| fail(format_args!("cannot write {path}: {e}"))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run() -> Result<(), ExitCode> {
    match Cli::parse().command {
        Command::Simulate { common, snr_db } => {
            let mut cfg = load_config(&common)?;
            if let Some(snr) = snr_db {
                cfg.pipeline.snr_db = snr;
            }
            let rows = run_simulate(&cfg).map_err(fail)?;
            emit(&cfg, &render_csv(&rows))
        }
        Command::Sweep { common, snr_db } => {
            let mut cfg = load_config(&common)?;
            if let Some(list) = snr_db {
                if list.is_empty() {
                    return Err(fail("--snr-db needs at least one value"));
                }
                cfg.sweep.snr_db = list;
            }
            let rows = run_sweep(&cfg).map_err(fail)?;
            emit(&cfg, &render_csv(&rows))
        }
        Command::Coverage { common } => {
            let cfg = load_config(&common)?;
            let report = coverage_report(&cfg).map_err(fail)?;
            emit(&cfg, &report)
        }
        Command::CodecSelftest { common } => {
            let cfg = load_config(&common)?;
            let digest = codec_selftest(cfg.pipeline.seed).map_err(fail)?;
            emit(&cfg, &format!("codec-selftest ok digest={digest}\n"))
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
