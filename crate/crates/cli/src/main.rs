//! `moire`: runs the density-of-states, band-structure and verification
//! computations of `moire-core` from a TOML config and writes JSON, CSV and
//! plot data.
//!
//! Exit codes: 0 success, 1 computation failed, 2 bad config or usage,
//! 3 finished with numerical warnings.

mod commands;
mod config;
mod emit;

use clap::{Parser, Subcommand};
use commands::{CliError, Ctx};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "moire", version, about = "Moiré density of states and symbol-calculus checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized checks; overrides `numerics.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Exact density of states over the eps list.
    DosExact,
    /// Expansion coefficients c0, c1, c2 and partial sums.
    DosExpansion,
    /// Bands along K -> Gamma -> M -> K.
    Bands,
    /// Composition-order and trace-formula checks.
    WeylVerify,
    /// Leading density of states of the atomic model and spectral scans.
    AtomicDos,
    /// Integration-by-parts identity under basis refinement.
    IbpCheck,
    /// Joins dos-exact and dos-expansion outputs and fits slopes.
    Compare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::DosExact => "dos-exact",
            Command::DosExpansion => "dos-expansion",
            Command::Bands => "bands",
            Command::WeylVerify => "weyl-verify",
            Command::AtomicDos => "atomic-dos",
            Command::IbpCheck => "ibp-check",
            Command::Compare => "compare",
        }
    }
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = RunConfig::parse(&text)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(|e| CliError::Run(e.to_string()))?;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    let seed = cli.seed.unwrap_or(cfg.numerics.seed);
    let ctx = Ctx { cfg: &cfg, seed, out: &out, verbose: cli.verbose };
    let report = match cli.command {
        Command::DosExact => commands::dos_exact(&ctx),
        Command::DosExpansion => commands::dos_expansion(&ctx),
        Command::Bands => commands::bands(&ctx),
        Command::WeylVerify => commands::weyl_verify(&ctx),
        Command::AtomicDos => commands::atomic_dos(&ctx),
        Command::IbpCheck => commands::ibp_check(&ctx),
        Command::Compare => commands::compare(&ctx),
    }?;
    let name = cli.command.name();
    let doc = emit::document(name, &cfg, &text, seed, &report);
    let written = emit::write_all(&out, name, &cfg, &doc, &report).map_err(|e| CliError::Run(format!("writing {}: {e}", out.display())))?;
    if cli.verbose {
        for w in &written {
            eprintln!("wrote {}", out.join(w).display());
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(report.warnings.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
