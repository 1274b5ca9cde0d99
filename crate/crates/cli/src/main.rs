use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use priceband_cli::{cmd_backtest, cmd_evaluate, cmd_synth, cmd_trade, load_config, CliError, LoadedConfig};

/// Probabilistic price forecasting backtests and battery trading.
///
/// Log verbosity is read from PRICEBAND_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "priceband", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set battery.capacity=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override the output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic series as CSV.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Destination file (default: <output>/data.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rolling-origin backtest: forecasts, truths and the evaluation report.
    Backtest {
        #[command(flatten)]
        common: Common,
        /// Worker threads (results do not depend on this).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Trade persisted forecasts and settle against realised prices.
    Trade {
        #[command(flatten)]
        common: Common,
        /// Directory holding forecast and truth files (default: <output>/forecasts).
        #[arg(long)]
        forecasts: Option<PathBuf>,
    },
    /// Recompute the report from persisted forecasts.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        forecasts: Option<PathBuf>,
    },
}

fn load(common: &Common, extra: &[String]) -> Result<LoadedConfig, CliError> {
    let mut overrides = common.overrides.clone();
    overrides.extend_from_slice(extra);
    let mut cfg = load_config(&common.config, &overrides)?;
    if let Some(o) = &common.output {
        cfg.config.output = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common, out } => {
            let path = cmd_synth(&load(&common, &[])?, out.as_deref())?;
            println!("{}", path.display());
        }
        Command::Backtest { common, threads } => {
            let extra: Vec<String> = threads.map(|t| format!("threads={t}")).into_iter().collect();
            let cfg = load(&common, &extra)?;
            let out = cmd_backtest(&cfg)?;
            println!("config_hash={}", cfg.hash);
            for r in &out.report.rows {
                println!(
                    "{:<7} {:<7} {:<8} aps={:.4} width={:.4} coverage={:.4} winkler={:.4}",
                    r.method, r.learner, r.level_pair, r.aps, r.mean_width, r.coverage, r.winkler
                );
            }
        }
        Command::Trade { common, forecasts } => {
            let rows = cmd_trade(&load(&common, &[])?, forecasts.as_deref())?;
            for r in &rows {
                println!(
                    "{:<7} {:<7} {} {} windows={} trades={} profit={:.4}",
                    r.method, r.learner, r.strategy, r.market, r.windows, r.trades, r.profit
                );
            }
        }
        Command::Evaluate { common, forecasts } => {
            let report = cmd_evaluate(&load(&common, &[])?, forecasts.as_deref())?;
            println!("{} report rows", report.rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PRICEBAND_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
