use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cooperative_decay::analysis::TailWindow;
use cooperative_decay_cli::commands::{self, FitArgs};
use cooperative_decay_cli::CliError;

#[derive(Parser)]
#[command(name = "coopdecay", version, about = "Collective decay of emitter arrays: runs, sweeps and analysis")]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its output bundle.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a configuration across the values of one axis.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a bundle against its manifest.
    Verify {
        dir: PathBuf,
        /// Also re-execute the persisted config and compare every file.
        #[arg(long)]
        rerun: bool,
    },
    /// Jump-spectrum statistics over lattice spacing and disorder.
    SpectrumScan {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit stretched exponentials to an existing trace file.
    Fit {
        trace: PathBuf,
        #[arg(long, default_value_t = 3)]
        terms: usize,
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fit only t <= WINDOW (units of tau).
        #[arg(long)]
        window: Option<f64>,
        /// Weight of the initial-slope penalty.
        #[arg(long)]
        penalty: Option<f64>,
        #[arg(long, value_enum, default_value_t = Tail::Linear)]
        tail: Tail,
        /// Also report the largest shortfall below independent decay.
        #[arg(long)]
        deviation: bool,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Tail {
    Linear,
    Log,
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Run { config, out, seed } => commands::run(&config, out.as_deref(), seed),
        Command::Sweep { config, out, seed } => commands::sweep(&config, out.as_deref(), seed),
        Command::SpectrumScan { config, out, seed } => commands::spectrum_scan(&config, out.as_deref(), seed),
        Command::Verify { dir, rerun } => commands::verify(&dir, rerun),
        Command::Fit {
            trace,
            terms,
            bootstrap,
            seed,
            window,
            penalty,
            tail,
            deviation,
            out,
        } => {
            let args = FitArgs {
                terms,
                bootstrap,
                seed,
                window,
                penalty,
                tail: match tail {
                    Tail::Linear => TailWindow::Linear,
                    Tail::Log => TailWindow::Log,
                },
                deviation,
            };
            let report = commands::fit(&trace, &args)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &report).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    Ok(format!("fit report written to {}\n", path.display()))
                }
                None => Ok(report),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match dispatch(cli) {
        Ok(msg) => {
            print!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
