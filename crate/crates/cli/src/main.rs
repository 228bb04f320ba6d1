use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gra_cli::{load_config, run_manifest, CliError, Preset, RunManifest};
use gra_core::AccessMode;

/// Grouped random-access vs EAB simulator.
#[derive(Debug, Parser)]
#[command(name = "gra", version = gra_cli::BUILD_ID)]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "grouped-ra")]
    mode: AccessMode,
    /// Monte-Carlo repetitions per point.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Seed of the first run; run i uses seed + i.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Print the configuration with every default filled in and exit.
    #[arg(long)]
    emit_effective_config: bool,
    /// Also write whitespace-separated .dat tables.
    #[arg(long)]
    gnuplot: bool,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_env_filter(
        tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
    ).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.json_line());
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if cli.emit_effective_config {
        let config = load_config(cli.config.as_deref())?;
        let config = match cli.preset {
            Some(p) => p.configure(&config),
            None => config,
        };
        print!("{}", config.to_toml());
        return Ok(());
    }
    let manifest = RunManifest {
        config_path: cli.config,
        mode: cli.mode,
        runs: cli.runs,
        seed: cli.seed,
        out: cli.out,
        preset: cli.preset,
        gnuplot: cli.gnuplot,
    };
    for path in run_manifest(&manifest)? {
        println!("{}", path.display());
    }
    Ok(())
}
