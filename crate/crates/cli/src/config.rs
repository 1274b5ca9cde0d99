//! Run configuration: one TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use priceband::backtest::{BacktestConfig, BacktestSpec, Market, Method, QraParams};
use priceband::conformal::ConformalParams;
use priceband::dataset::{CsvSchema, LagSpec, SynthParams};
use priceband::learners::{LearnerParams, ModelKind};
use priceband::quantile::QuantileGrid;
use priceband::trading::{BatteryConfig, TradingParams};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Market CSV; relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Worker threads. Not part of the config hash: results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub data: DataConfig,
    pub lags: LagSpec,
    #[serde(default = "default_learners")]
    pub learners: Vec<ModelKind>,
    #[serde(default)]
    pub learner: LearnerParams,
    pub methods: Vec<Method>,
    #[serde(default = "default_grid")]
    pub grid: QuantileGrid,
    /// Interval levels scored in reports; every symmetric grid pair when empty.
    #[serde(default)]
    pub report_alphas: Vec<f64>,
    #[serde(default)]
    pub backtest: BacktestSpec,
    #[serde(default)]
    pub conformal: ConformalParams,
    #[serde(default)]
    pub qra: QraParams,
    #[serde(default)]
    pub battery: BatteryConfig,
    #[serde(default)]
    pub trading: TradingParams,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_learners() -> Vec<ModelKind> {
    vec![ModelKind::Lear]
}

fn default_grid() -> QuantileGrid {
    QuantileGrid::deciles()
}

/// A parsed config together with its identity hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
}

impl LoadedConfig {
    pub fn header(&self) -> String {
        format!("config_hash={}", self.hash)
    }
}

/// Apply `key.path=value` overrides to a TOML table. The value is read as a
/// TOML literal and falls back to a bare string.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), CliError> {
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override '{o}' is not key=value")))?;
        let value = parse_value(raw.trim());
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(CliError::Config(format!("bad override key '{key}'")));
        }
        let mut cur = &mut *table;
        for p in &parts[..parts.len() - 1] {
            let entry = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("override '{key}': '{p}' is not a table")))?;
        }
        cur.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    apply_overrides(&mut table, overrides)?;
    RunConfig::deserialize(table).map_err(|e| CliError::Config(e.to_string()))
}

/// Read, override, resolve relative paths, validate and hash.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Core(priceband::Error::io(path, e)))?;
    let mut config = parse_config(&text, overrides)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(csv) = &config.data.csv {
        if csv.is_relative() {
            config.data.csv = Some(base.join(csv));
        }
    }
    if config.output.is_relative() && !base.as_os_str().is_empty() {
        config.output = base.join(&config.output);
    }
    config.validate()?;
    let hash = config_hash(&config)?;
    Ok(LoadedConfig { config, hash })
}

/// SHA-256 over the canonical JSON form of the config (threads and output
/// directory excluded) and, for CSV sources, the data file bytes.
pub fn config_hash(config: &RunConfig) -> Result<String, CliError> {
    let mut canon = config.clone();
    canon.threads = None;
    canon.output = PathBuf::new();
    let csv = canon.data.csv.take();
    let json = serde_json::to_vec(&canon).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut h = Sha256::new();
    h.update(&json);
    if let Some(p) = csv {
        let bytes = std::fs::read(&p).map_err(|e| CliError::Core(priceband::Error::io(&p, e)))?;
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data.csv, &self.data.synth) {
            (Some(_), Some(_)) => return Err(CliError::Config("data: give either csv or synth, not both".into())),
            (None, None) => return Err(CliError::Config("data: one of csv or synth is required".into())),
            _ => {}
        }
        if let Some(s) = &self.data.synth {
            s.validate()?;
        }
        self.backtest_config().validate()?;
        self.battery.validate()?;
        if self.trading.soc_steps < 2 {
            return Err(CliError::Config("trading.soc_steps must be >= 2".into()));
        }
        if self.trading.strategies.is_empty() {
            return Err(CliError::Config("trading.strategies is empty".into()));
        }
        Ok(())
    }

    pub fn report_alphas(&self) -> Vec<f64> {
        if self.report_alphas.is_empty() {
            self.grid.symmetric_pairs()
        } else {
            self.report_alphas.clone()
        }
    }

    pub fn backtest_config(&self) -> BacktestConfig {
        BacktestConfig {
            lags: self.lags.clone(),
            learners: self.learners.clone(),
            learner_params: self.learner.clone(),
            methods: self.methods.clone(),
            grid: self.grid.clone(),
            backtest: self.backtest.clone(),
            conformal: self.conformal.clone(),
            qra: self.qra.clone(),
            report_alphas: self.report_alphas(),
            seed: self.seed,
            threads: self.threads,
        }
    }

    /// `(method, learner label)` pairs the backtest produces, in report order.
    pub fn run_labels(&self) -> Vec<(Method, String)> {
        let mut out = Vec::new();
        for &m in &self.methods {
            if m == Method::Qr {
                out.push((m, priceband::backtest::LINEAR.to_string()));
            } else {
                out.extend(self.learners.iter().map(|k| (m, k.name().to_string())));
            }
        }
        out
    }

    pub fn market(&self) -> Market {
        self.backtest.market
    }
}
