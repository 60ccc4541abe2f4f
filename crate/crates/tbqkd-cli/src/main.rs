//! `tbqkd`: key-rate sweeps, optimization, decoy comparison, tomography checks and
//! finite-size runs, each writing CSV/JSON artifacts plus a replayable manifest.

mod artifacts;
mod commands;
mod config;
mod reproduce;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use tbqkd::Error;

use artifacts::{sha256_hex, Artifacts, Manifest};
use config::RunConfig;
use reproduce::Target;

#[derive(Debug, Parser)]
#[command(name = "tbqkd", version, about = "Time-bin CV QKD key rates and parameter estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Key rate over a distance list for a fixed protocol.
    Sweep,
    /// Grid search over intensities and threshold per distance.
    Optimize,
    /// Decoy LP bounds against the exact per-photon yields.
    DecoyCompare,
    /// Homodyne tomography estimates against closed-form expectations.
    TomoVerify,
    /// Simulated finite-size run with certified bounds.
    FiniteSize,
    /// Regenerates one published figure or table as CSV.
    Reproduce {
        #[arg(long, value_enum)]
        target: Target,
    },
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Sweep => "sweep".into(),
            Command::Optimize => "optimize".into(),
            Command::DecoyCompare => "decoy-compare".into(),
            Command::TomoVerify => "tomo-verify".into(),
            Command::FiniteSize => "finite-size".into(),
            Command::Reproduce { target } => {
                format!("reproduce --target {}", target.to_possible_value().expect("not skipped").get_name())
            }
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_config() => 2,
        Error::Io(_) => 1,
        _ => 3,
    }
}

fn fail(e: &Error) -> ExitCode {
    let kind = match exit_code(e) {
        2 => "config",
        1 => "io",
        _ => "numeric",
    };
    eprintln!("{}", json!({ "status": "error", "kind": kind, "message": e.to_string() }));
    ExitCode::from(exit_code(e))
}

fn load_config(cli: &Cli) -> tbqkd::Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        (None, Command::Reproduce { .. }) => RunConfig::default(),
        (None, _) => return Err(Error::Config("--config is required for this subcommand".into())),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.seed.get_or_insert(0);
    Ok(cfg)
}

fn run(cli: &Cli) -> tbqkd::Result<()> {
    let cfg = load_config(cli)?;
    let seed = cfg.seed.unwrap_or_default();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut out = Artifacts::new(&cli.out)?;
    match &cli.command {
        Command::Sweep => commands::sweep(&cfg, &mut out)?,
        Command::Optimize => commands::optimize_cmd(&cfg, &mut out)?,
        Command::DecoyCompare => commands::decoy_compare(&cfg, &mut out)?,
        Command::TomoVerify => commands::tomo_verify(&cfg, seed, &mut out)?,
        Command::FiniteSize => commands::finite_size(&cfg, seed, &mut out)?,
        Command::Reproduce { target } => reproduce::run(*target, &cfg.channel, &mut out)?,
    }
    // The canonical configuration (with the effective seed) is what the replay command reads.
    let text = cfg.to_toml();
    fs::write(cli.out.join("config.toml"), &text)?;
    let command = cli.command.name();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: &command,
        seed,
        threads: rayon::current_num_threads(),
        config_sha256: sha256_hex(text.as_bytes()),
        replay: format!("{command} --config {} --out {}", cli.out.join("config.toml").display(), cli.out.display()),
        artifacts: out.entries(),
    };
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(cli.out.join("manifest.json"), body + "\n")?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
