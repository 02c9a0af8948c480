use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use countreg_cli::{run, sweep, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "countreg", version, about = "Specification search for count regression models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for specifications, or estimate the Manual_Fit model when no algorithm is set.
    Run {
        config: PathBuf,
        /// Write results here instead of a fresh folder under output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the single Manual_Fit model.
    Fit {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every combination of a hyperparameter grid for several seeds.
    Sweep {
        config: PathBuf,
        /// JSON object mapping hyperparameter names to lists of values.
        grid: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// Results CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = RunConfig::load(&config)?;
            run::run(&cfg, out.as_deref())?;
        }
        Command::Fit { config, out } => {
            let cfg = RunConfig::load(&config)?;
            run::run_fit(&cfg, out.as_deref())?;
        }
        Command::Sweep { config, grid, seeds, out } => {
            let cfg = RunConfig::load(&config)?;
            let text = std::fs::read_to_string(&grid)
                .map_err(|e| CliError::Config(format!("{}: {e}", grid.display())))?;
            let csv = sweep::sweep(&cfg, &sweep::parse_grid(&text)?, seeds)?;
            match out {
                Some(p) => std::fs::write(&p, csv).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
