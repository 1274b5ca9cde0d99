//! Library side of the `priceband` command: config handling and the four
//! subcommands, kept here so integration tests can drive them in-process.

pub mod commands;
pub mod config;

use thiserror::Error;

pub use commands::{cmd_backtest, cmd_evaluate, cmd_synth, cmd_trade, SummaryRow};
pub use config::{load_config, parse_config, LoadedConfig, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] priceband::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// Process exit code: 2 config, 3 data, 4 internal invariant.
    pub fn exit_code(&self) -> i32 {
        use priceband::ErrorKind;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Invariant => 4,
            },
            CliError::Internal(_) => 4,
        }
    }
}
