use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use epfens_cli::{CliError, FetchOptions, RunConfig};

#[derive(Parser)]
#[command(
    name = "epfens",
    version,
    about = "Ensemble price forecasts: combine, evaluate and trade"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the dataset layout, or write a synthetic dataset.
    FetchData {
        #[command(flatten)]
        common: Common,
        /// Generate synthetic data from the config seed.
        #[arg(long)]
        synthetic: bool,
        /// Directory to check or to write to.
        #[arg(long)]
        dest: Option<PathBuf>,
        /// Days of synthetic data.
        #[arg(long, default_value_t = 554)]
        days: usize,
    },
    /// Build the combined forecast panel of every ensemble.
    Combine(Common),
    /// Score ensembles and their experts.
    Evaluate(Common),
    /// Run the bidding strategy across the risk appetite grid.
    Trade(Common),
    /// Pairwise Diebold-Mariano p-values only.
    DmMatrix(Common),
    /// Combine, evaluate and trade.
    Report(Common),
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_path(&common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::FetchData {
            common,
            synthetic,
            dest,
            days,
        } => {
            let cfg = load(&common)?;
            let summary = epfens_cli::fetch_data(&cfg, &FetchOptions { synthetic, dest, days })?;
            println!("{summary}");
            Ok(())
        }
        Command::Combine(c) => {
            for path in epfens_cli::combine(&load(&c)?)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Evaluate(c) => epfens_cli::evaluate(&load(&c)?),
        Command::Trade(c) => epfens_cli::trade(&load(&c)?),
        Command::DmMatrix(c) => epfens_cli::dm_matrix(&load(&c)?),
        Command::Report(c) => epfens_cli::report(&load(&c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
