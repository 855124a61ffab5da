use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use twobeam_cli::config::RunConfig;
use twobeam_cli::io::atomic_write;
use twobeam_cli::{commands, CliError};

#[derive(Parser)]
#[command(name = "twobeam", version, about = "Two-beam detector nonlinearity toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a full measurement sweep and reduce it to nonlinearity points
    Simulate {
        /// TOML run configuration with [detector] and [simulate] sections
        #[arg(long)]
        config: PathBuf,
        /// Override the configured RNG seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Reduce a raw measurement record file to nonlinearity points
    Analyze {
        /// records.csv produced by `simulate` or external acquisition
        input: PathBuf,
        /// Optional TOML configuration; [analyze].repetitions sets the
        /// cycles pooled per point (default: all cycles into one point)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fit detector response models to nonlinearity points
    Fit {
        /// points.csv produced by `simulate` or `analyze`
        input: PathBuf,
        /// Comma-separated model list (NP, P, NP-P, P-NP); overrides config
        #[arg(long)]
        models: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Allan-deviation stability analysis of binned counts
    Allan {
        /// counts.csv with one bin per row
        input: PathBuf,
        /// TOML configuration with an [allan] section
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Optimal phase-time allocation for a measurement cycle
    Plan {
        /// TOML configuration with a [plan] section
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Statistical precision bounds over a grid of detected rates
    Bounds {
        /// TOML configuration with a [bounds] section
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let (doc, out) = match cli.command {
        Command::Simulate { config, seed, out } => {
            let cfg = RunConfig::load(&config)?;
            prepare(&out)?;
            (commands::simulate(&cfg, seed, &out)?, out)
        }
        Command::Analyze { input, config, out } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            prepare(&out)?;
            (commands::analyze(cfg.as_ref(), &input, &out)?, out)
        }
        Command::Fit {
            input,
            models,
            config,
            out,
        } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            prepare(&out)?;
            (commands::fit(cfg.as_ref(), &input, models.as_deref(), &out)?, out)
        }
        Command::Allan { input, config, out } => {
            let cfg = RunConfig::load(&config)?;
            prepare(&out)?;
            (commands::allan(&cfg, &input, &out)?, out)
        }
        Command::Plan { config, out } => {
            let cfg = RunConfig::load(&config)?;
            prepare(&out)?;
            (commands::plan(&cfg)?, out)
        }
        Command::Bounds { config, out } => {
            let cfg = RunConfig::load(&config)?;
            prepare(&out)?;
            (commands::bounds(&cfg, &out)?, out)
        }
    };
    let json = doc.to_json()?;
    atomic_write(&out.join("result.json"), json.as_bytes())?;
    print!("{json}");
    // Stderr only: keeps output files and stdout byte-stable across reruns.
    eprintln!("completed in {:.3}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn prepare(out: &std::path::Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))
}

fn main() -> ExitCode {
    // Clap's own exit code for usage errors is 2, which this tool reserves
    // for runtime failures; remap argument problems to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
