//! Probabilistic price forecasting: quantile regression, conformal prediction
//! intervals, forecast combination, evaluation metrics and battery arbitrage.

pub mod backtest;
pub mod combine;
pub mod conformal;
pub mod dataset;
pub mod error;
pub mod io;
pub mod learners;
pub mod metrics;
pub mod quantile;
pub mod trading;

pub use error::{Error, ErrorKind, Result};
