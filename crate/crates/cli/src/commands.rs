use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use priceband::backtest::{run_backtest, BacktestOutput};
use priceband::dataset::{load_csv, synth_series, write_frame_csv, SeriesFrame};
use priceband::io::{
    forecast_file_name, format_timestamp, read_forecast_csv, read_truth_csv, write_forecast_csv, write_truth_csv,
};
use priceband::metrics::{build_report, EvalReport, RunOutput};
use priceband::quantile::QuantileForecast;
use priceband::trading::{trade_window, write_ledger_csv, TradeLedger};
use priceband::Error;

use crate::config::LoadedConfig;
use crate::CliError;

pub const TRUTH_FILE: &str = "truth.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const EVAL_CSV: &str = "evaluation.csv";
pub const EVAL_JSON: &str = "evaluation.json";
pub const SUMMARY_CSV: &str = "trade_summary.csv";

/// Write through a temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> priceband::Result<()>) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

pub fn load_frame(cfg: &LoadedConfig) -> Result<SeriesFrame, CliError> {
    let c = &cfg.config;
    match (&c.data.csv, &c.data.synth) {
        (Some(path), _) => Ok(load_csv(path, &c.data.schema)?),
        (None, Some(params)) => Ok(synth_series(params, c.seed)?),
        (None, None) => Err(CliError::Config("no data source".into())),
    }
}

/// Generate the configured synthetic series and write it as CSV.
pub fn cmd_synth(cfg: &LoadedConfig, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let c = &cfg.config;
    let params = c
        .data
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Config("synth needs a [data.synth] section".into()))?;
    let frame = synth_series(params, c.seed)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| c.output.join("data.csv"));
    let header = cfg.header();
    write_atomic(&path, |w| write_frame_csv(&frame, w, Some(&header)))?;
    info!("wrote {} rows to {}", frame.len(), path.display());
    Ok(path)
}

fn forecasts_dir(cfg: &LoadedConfig, dir: Option<&Path>) -> PathBuf {
    dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.config.output.join("forecasts"))
}

fn write_report(report: &EvalReport, dir: &Path, csv_name: &str, json_name: &str) -> Result<(), CliError> {
    write_atomic(&dir.join(csv_name), |w| report.write_csv(w))?;
    write_atomic(&dir.join(json_name), |w| report.write_json(w))?;
    Ok(())
}

/// Rolling-origin backtest; persists per-run forecasts, truths and the report.
pub fn cmd_backtest(cfg: &LoadedConfig) -> Result<BacktestOutput, CliError> {
    let c = &cfg.config;
    let frame = load_frame(cfg)?;
    let mut out = run_backtest(&frame, &c.backtest_config())?;
    let mut distinct: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for w in &out.warnings {
        *distinct.entry(w.as_str()).or_default() += 1;
    }
    for (w, k) in distinct {
        warn!("{w} ({k} origin(s))");
    }
    out.report.config_hash = Some(cfg.hash.clone());
    let header = cfg.header();
    let dir = forecasts_dir(cfg, None);
    write_atomic(&dir.join(TRUTH_FILE), |w| write_truth_csv(w, &out.timestamps, &out.truths, Some(&header)))?;
    for run in &out.runs {
        let path = dir.join(forecast_file_name(&run.method, &run.learner));
        write_atomic(&path, |w| write_forecast_csv(w, &run.timestamps, &run.forecast, Some(&header)))?;
    }
    write_report(&out.report, &c.output, REPORT_CSV, REPORT_JSON)?;
    info!(
        "backtest: {} windows, {} runs, report in {}",
        out.window_starts.len(),
        out.runs.len(),
        c.output.display()
    );
    Ok(out)
}

fn load_truth(dir: &Path) -> Result<(Vec<chrono::DateTime<chrono::Utc>>, Vec<f64>), CliError> {
    Ok(read_truth_csv(open(&dir.join(TRUTH_FILE))?)?)
}

fn load_runs(cfg: &LoadedConfig, dir: &Path) -> Result<Vec<RunOutput>, CliError> {
    cfg.config
        .run_labels()
        .into_iter()
        .map(|(m, learner)| {
            let path = dir.join(forecast_file_name(m.name(), &learner));
            let (timestamps, forecast) = read_forecast_csv(open(&path)?)?;
            Ok(RunOutput {
                method: m.name().to_string(),
                learner,
                timestamps,
                forecast,
            })
        })
        .collect()
}

/// Recompute the report from persisted forecasts.
pub fn cmd_evaluate(cfg: &LoadedConfig, forecasts: Option<&Path>) -> Result<EvalReport, CliError> {
    let dir = forecasts_dir(cfg, forecasts);
    let (timestamps, truths) = load_truth(&dir)?;
    let runs = load_runs(cfg, &dir)?;
    let mut report = build_report(&runs, &truths, &timestamps, &cfg.config.report_alphas())?;
    report.config_hash = Some(cfg.hash.clone());
    write_report(&report, &cfg.config.output, EVAL_CSV, EVAL_JSON)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub learner: String,
    pub strategy: String,
    pub market: String,
    pub windows: usize,
    pub trades: usize,
    pub profit: f64,
}

fn window(forecast: &QuantileForecast, range: std::ops::Range<usize>) -> priceband::Result<QuantileForecast> {
    QuantileForecast::new(forecast.grid().clone(), forecast.steps()[range].to_vec())
}

/// Trade every persisted forecast window with every configured strategy and
/// settle at the realised prices.
pub fn cmd_trade(cfg: &LoadedConfig, forecasts: Option<&Path>) -> Result<Vec<SummaryRow>, CliError> {
    let c = &cfg.config;
    let dir = forecasts_dir(cfg, forecasts);
    let (timestamps, truths) = load_truth(&dir)?;
    let runs = load_runs(cfg, &dir)?;
    let h = c.backtest.horizon;
    if timestamps.len() % h != 0 {
        return Err(Error::Alignment(format!("{} truth rows do not split into {h}-period windows", timestamps.len())).into());
    }
    let market = match c.market() {
        priceband::backtest::Market::Dam => "dam",
        priceband::backtest::Market::Bm => "bm",
    };
    let header = cfg.header();
    let mut summary = Vec::new();
    for run in &runs {
        if run.timestamps != timestamps {
            return Err(Error::Alignment(format!(
                "forecast {}/{} does not match the truth timestamps",
                run.method, run.learner
            ))
            .into());
        }
        for &strategy in &c.trading.strategies {
            let mut ledgers: Vec<(String, TradeLedger)> = Vec::new();
            for start in (0..timestamps.len()).step_by(h) {
                let f = window(&run.forecast, start..start + h)?;
                let ledger = trade_window(strategy, &f, &truths[start..start + h], &c.battery, &c.trading)?;
                ledgers.push((format_timestamp(&timestamps[start]), ledger));
            }
            let refs: Vec<(String, &TradeLedger)> = ledgers.iter().map(|(s, l)| (s.clone(), l)).collect();
            let path = c
                .output
                .join("trades")
                .join(format!("ledger_{}_{}_{}.csv", run.method, run.learner, strategy.name()));
            write_atomic(&path, |w| write_ledger_csv(&refs, w, Some(&header)))?;
            summary.push(SummaryRow {
                method: run.method.clone(),
                learner: run.learner.clone(),
                strategy: strategy.name().to_string(),
                market: market.to_string(),
                windows: ledgers.len(),
                trades: ledgers.iter().map(|(_, l)| l.records.len()).sum(),
                // f64 sums start at -0.0; keep an untraded run printing as 0
                profit: ledgers.iter().map(|(_, l)| l.profit).sum::<f64>() + 0.0,
            });
        }
    }
    write_atomic(&c.output.join(SUMMARY_CSV), |w| {
        writeln!(w, "# {header}").map_err(|e| Error::io(SUMMARY_CSV, e))?;
        let mut csv = csv::Writer::from_writer(w);
        for row in &summary {
            csv.serialize(row)?;
        }
        csv.flush().map_err(|e| Error::io(SUMMARY_CSV, e))?;
        Ok(())
    })?;
    Ok(summary)
}
