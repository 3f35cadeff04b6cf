//! `sjd`: run decoders, losslessness checks, coupling statistics and sweeps
//! on tabular toy models.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sjd_core::harness::{
    cmd_coupling_stats, cmd_generate, cmd_sweep, cmd_verify_lossless, CommandOutput,
    ExperimentConfig, HarnessError, HarnessResult,
};

const AFTER_HELP: &str = "Any configuration field can be overridden as `--section.field value` \
(for example `--decode.window 16` or `--sweep.values [4,8,16]`).\n\
Exit status: 0 ok, 1 check failed, 2 configuration error, 3 I/O error.";

#[derive(Debug, Parser)]
#[command(name = "sjd", version, about, after_help = AFTER_HELP)]
struct Cli {
    /// TOML configuration file; unset fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides run.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file (overrides output.path); standard output otherwise.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format (overrides output.format).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Report,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decode run.trials sequences; one row per trial plus an aggregate.
    Generate,
    /// Compare every decoder's output law with the exact law.
    VerifyLossless,
    /// Collision probabilities of the couplers on random distribution pairs.
    CouplingStats,
    /// Aggregate rows across one axis (window, cfg_scale, flatness, coupler).
    Sweep,
}

/// Splits `--section.field value` / `--section.field=value` pairs out of the
/// argument list, leaving the rest for clap.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| format!("override `--{name}` needs a value"))?,
        };
        overrides.push((name.to_string(), value));
    }
    Ok((rest, overrides))
}

fn run(cli: Cli, mut overrides: Vec<(String, String)>) -> HarnessResult<CommandOutput> {
    let text = match &cli.config {
        Some(path) => Some(
            std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
                path: path.clone(),
                source,
            })?,
        ),
        None => None,
    };
    if let Some(seed) = cli.seed {
        overrides.push(("run.seed".into(), seed.to_string()));
    }
    if let Some(format) = cli.format {
        let name = match format {
            Format::Csv => "csv",
            Format::Report => "report",
        };
        overrides.push(("output.format".into(), name.into()));
    }
    if let Some(out) = &cli.out {
        overrides.push((
            "output.path".into(),
            toml::Value::String(out.display().to_string()).to_string(),
        ));
    }
    let cfg = ExperimentConfig::load(text.as_deref(), &overrides)?;

    let output = match cli.command {
        Command::Generate => cmd_generate(&cfg)?,
        Command::VerifyLossless => cmd_verify_lossless(&cfg)?,
        Command::CouplingStats => cmd_coupling_stats(&cfg)?,
        Command::Sweep => cmd_sweep(&cfg)?,
    };
    let rendered = output.render(cfg.output.format);
    match &cfg.output.path {
        Some(path) => std::fs::write(path, rendered).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?,
        None => print!("{rendered}"),
    }
    Ok(output)
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(split) => split,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli, overrides) {
        Ok(out) if out.passed => ExitCode::SUCCESS,
        Ok(out) => {
            eprintln!("{}: one or more checks failed", out.command);
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
