mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::commands::{CliError, Context};
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "dpp-transfer", version, about = "Transfer, sample and probe determinantal point process kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the base RNG stream id in the configuration.
    #[arg(long, global = true)]
    streams: Option<u64>,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for library-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build the transferred kernel Q and check it against K.
    Transfer,
    /// Draw configurations from the kernel.
    Sample,
    /// Exact joint law of the cell counts.
    CountLaw,
    /// Compare cell-count laws under K and Q.
    Verify,
    /// Tail-mixing sweep and downward martingale probe.
    TailSweep,
    /// Conditional frequencies along a refining ladder of partitions.
    Levy,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Transfer => "transfer",
            Command::Sample => "sample",
            Command::CountLaw => "count-law",
            Command::Verify => "verify",
            Command::TailSweep => "tail-sweep",
            Command::Levy => "levy",
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::validation("--config PATH is required"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json(&text).map_err(CliError::from)?;
    let name = cli.command.name();
    match &cfg.subcommand {
        Some(s) if s != name => {
            return Err(CliError::validation(format!("config is for `{s}`, not `{name}`")));
        }
        _ => cfg.subcommand = Some(name.to_string()),
    }
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(stream) = cli.streams {
        cfg.stream = Some(stream);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), (CliError, Option<String>)> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err((CliError::validation("--threads must be positive"), None));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| (CliError::internal(e.to_string()), None))?;
    }
    let cfg = load(cli).map_err(|e| (e, None))?;
    let hash = cfg.hash();
    let ctx = Context::new(cfg, cli.out.clone()).map_err(|e| (e, Some(hash.clone())))?;
    let result = match cli.command {
        Command::Transfer => commands::transfer(&ctx),
        Command::Sample => commands::sample(&ctx),
        Command::CountLaw => commands::count_law(&ctx),
        Command::Verify => commands::verify(&ctx),
        Command::TailSweep => commands::tail_sweep(&ctx),
        Command::Levy => commands::levy(&ctx),
    };
    result.map_err(|e| (e, Some(hash)))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report(&CliError::validation(e.to_string().trim()), None, None);
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, hash)) => {
            report(&e, hash.as_deref(), Some(&cli.out));
            ExitCode::from(e.code)
        }
    }
}

/// Writes the error as one JSON line to stderr, and to `error.json` when
/// the output directory exists.
fn report(e: &CliError, hash: Option<&str>, out: Option<&PathBuf>) {
    let body = json!({
        "error": e.kind,
        "message": e.message,
        "exit_code": e.code,
        "config_hash": hash,
        "version": dpp_transfer::VERSION,
    });
    eprintln!("{body}");
    if let Some(dir) = out.filter(|d| d.is_dir()) {
        let _ = std::fs::write(dir.join("error.json"), format!("{body:#}\n"));
    }
}
