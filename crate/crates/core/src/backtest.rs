//! Rolling-origin backtest: at each origin every learner is refit on the
//! trailing window and every requested method forecasts the next block.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combine::{q_ens, qra_run, ForecastPool};
use crate::conformal::{
    enbpi_grid, scp_grid, spci_from_residuals, ConformalParams, EnbpiOptions, IntervalRun, SpciOptions,
};
use crate::dataset::{build_features, rolling_splits, DesignMatrix, LagSpec, SeriesFrame};
use crate::error::{Error, Result};
use crate::learners::{fit_point, LearnerParams, ModelKind, Predictor};
use crate::metrics::{build_report, EvalReport, RunOutput};
use crate::quantile::{fit_linear_qr, rearrange, QuantileForecast, QuantileGrid};

/// Learner label used for the learner-free linear quantile regression.
pub const LINEAR: &str = "linear";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Qr,
    Scp,
    Enbpi,
    Spci,
    QraR,
    QraCp,
    QEns,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Qr,
        Method::Scp,
        Method::Enbpi,
        Method::Spci,
        Method::QraR,
        Method::QraCp,
        Method::QEns,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Qr => "qr",
            Method::Scp => "scp",
            Method::Enbpi => "enbpi",
            Method::Spci => "spci",
            Method::QraR => "qra_r",
            Method::QraCp => "qra_cp",
            Method::QEns => "q_ens",
        }
    }

    /// Methods whose outputs this one consumes.
    pub fn requires(self) -> &'static [Method] {
        match self {
            Method::QEns => &[Method::Qr, Method::Enbpi, Method::Spci],
            Method::QraCp => &[Method::Scp, Method::Enbpi, Method::Spci],
            _ => &[],
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Check that every method's inputs are also requested.
pub fn check_method_dependencies(methods: &[Method]) -> Result<()> {
    let set: BTreeSet<Method> = methods.iter().copied().collect();
    for m in methods {
        let missing: Vec<&str> = m.requires().iter().filter(|d| !set.contains(d)).map(|d| d.name()).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "method {m} requires {} in the method list",
                missing.join(", ")
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Market {
    /// Day-ahead: hourly periods, 24 per window.
    #[default]
    Dam,
    /// Balancing: half-hourly periods, 16 per window starting two periods out.
    Bm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestSpec {
    /// Rows of history each model is fitted on.
    pub train_len: usize,
    pub step: usize,
    pub horizon: usize,
    pub market: Market,
}

impl Default for BacktestSpec {
    fn default() -> Self {
        Self {
            train_len: 672,
            step: 24,
            horizon: 24,
            market: Market::Dam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QraParams {
    /// Recent fractions of the fitting window used as extra pool members
    /// (the full window is always a member).
    pub windows: Vec<f64>,
}

impl Default for QraParams {
    fn default() -> Self {
        Self { windows: vec![0.5, 0.25] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub lags: LagSpec,
    pub learners: Vec<ModelKind>,
    pub learner_params: LearnerParams,
    pub methods: Vec<Method>,
    pub grid: QuantileGrid,
    pub backtest: BacktestSpec,
    pub conformal: ConformalParams,
    pub qra: QraParams,
    /// Interval levels `alpha` scored in the report.
    pub report_alphas: Vec<f64>,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        check_method_dependencies(&self.methods)?;
        let needs_learner = self.methods.iter().any(|&m| m != Method::Qr);
        if needs_learner && self.learners.is_empty() {
            return Err(Error::Config("no learners requested".into()));
        }
        self.lags.validate()?;
        self.conformal.validate()?;
        let b = &self.backtest;
        if b.horizon != self.lags.horizon {
            return Err(Error::Config(format!(
                "backtest horizon {} differs from lag spec horizon {}",
                b.horizon, self.lags.horizon
            )));
        }
        if b.step < b.horizon {
            return Err(Error::Config(format!(
                "backtest step {} shorter than horizon {} would overlap test windows",
                b.step, b.horizon
            )));
        }
        let c = &self.conformal;
        if self.has(Method::Spci) && c.window < c.resid_lags + b.horizon {
            return Err(Error::Config(format!(
                "conformal.window {} must cover resid_lags {} plus the horizon {}",
                c.window, c.resid_lags, b.horizon
            )));
        }
        if self.qra.windows.iter().any(|&w| !(w > 0.0 && w < 1.0)) {
            return Err(Error::Config("qra.windows fractions must lie in (0, 1)".into()));
        }
        if self.grid.index_of(0.5).is_none() {
            return Err(Error::Config("quantile grid must contain the median (0.5)".into()));
        }
        for &a in &self.report_alphas {
            self.grid.require_pair(a)?;
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    fn has(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}

/// All forecasts of one backtest plus the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOutput {
    pub timestamps: Vec<DateTime<Utc>>,
    pub truths: Vec<f64>,
    pub runs: Vec<RunOutput>,
    pub report: EvalReport,
    /// First timestamp of each test window.
    pub window_starts: Vec<DateTime<Utc>>,
    pub warnings: Vec<String>,
}

impl BacktestOutput {
    pub fn run(&self, method: &str, learner: &str) -> Option<&RunOutput> {
        self.runs.iter().find(|r| r.method == method && r.learner == learner)
    }
}

// splitmix64 finaliser, used to derive independent per-task seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn task_seed(seed: u64, origin: usize, learner: usize) -> u64 {
    mix(mix(seed ^ mix(origin as u64)) ^ learner as u64)
}

struct OriginResult {
    /// `(method, learner) -> forecast` in a fixed order.
    forecasts: Vec<((Method, String), QuantileForecast)>,
    warnings: Vec<String>,
}

fn linear_qr(train: &DesignMatrix, test: &DesignMatrix, grid: &QuantileGrid) -> Result<(QuantileForecast, Vec<String>)> {
    let mut warnings = Vec::new();
    let cols = grid
        .levels()
        .iter()
        .map(|&a| {
            let m = fit_linear_qr(train, a)?;
            warnings.extend(m.warnings.iter().map(|w| format!("qr level {a}: {w}")));
            m.predict(&test.rows)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let values = (0..test.len()).map(|t| cols.iter().map(|c| c[t]).collect()).collect();
    Ok((rearrange(&QuantileForecast::new(grid.clone(), values)?), warnings))
}

fn spci_options(cfg: &BacktestConfig, online: bool) -> SpciOptions {
    let c = &cfg.conformal;
    let h = cfg.backtest.horizon;
    SpciOptions {
        window: c.window,
        resid_lags: c.resid_lags,
        qrf: c.qrf.clone(),
        mode: c.mode,
        online,
        refit_every: h,
        gap: h,
    }
}

/// SPCI for one test block. The base model is fitted on `fit`; its in-sample
/// residuals seed the buffer. When `revealed` is given, that block (which
/// follows `fit` and has known targets) is forecast first, one horizon at a
/// time, and its out-of-sample residuals join the buffer before `test`.
/// Returns the forecasts for `revealed` (if any) and for `test`.
fn spci_block(
    kind: ModelKind,
    fit: &DesignMatrix,
    revealed: Option<&DesignMatrix>,
    test: &DesignMatrix,
    cfg: &BacktestConfig,
    seed: u64,
) -> Result<(Option<IntervalRun>, IntervalRun)> {
    let model = fit_point(kind, fit, &cfg.learner_params, seed)?;
    let fitted = model.predict(&fit.rows)?;
    let mut resid: Vec<f64> = fit.targets.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let first = match revealed {
        Some(r) => {
            let centers = model.predict(&r.rows)?;
            let run = spci_from_residuals(&resid, &centers, Some(&r.targets), &cfg.grid, &spci_options(cfg, true), seed)?;
            resid.extend(r.targets.iter().zip(&centers).map(|(y, f)| y - f));
            Some(run)
        }
        None => None,
    };
    let centers = model.predict(&test.rows)?;
    let run = spci_from_residuals(&resid, &centers, None, &cfg.grid, &spci_options(cfg, false), seed)?;
    Ok((first, run))
}

fn run_origin(
    design: &DesignMatrix,
    train_range: std::ops::Range<usize>,
    test_range: std::ops::Range<usize>,
    origin_index: usize,
    cfg: &BacktestConfig,
) -> Result<OriginResult> {
    let train = design.for_targets(train_range);
    let test = design.for_targets(test_range);
    let n = train.len();
    let calib_len = ((n as f64) * cfg.conformal.calib_fraction).round() as usize;
    if calib_len == 0 || calib_len >= n {
        return Err(Error::InsufficientHistory(format!(
            "training window of {n} rows cannot hold a calibration split"
        )));
    }
    let fit = train.slice(0..n - calib_len);
    let calib = train.slice(n - calib_len..n);
    let grid = &cfg.grid;
    let mut out = Vec::new();
    let mut warnings = Vec::new();

    let qr = if cfg.has(Method::Qr) {
        let (f, w) = linear_qr(&train, &test, grid)?;
        warnings.extend(w);
        out.push(((Method::Qr, LINEAR.to_string()), f.clone()));
        Some(f)
    } else {
        None
    };

    for (li, &kind) in cfg.learners.iter().enumerate() {
        let seed = task_seed(cfg.seed, origin_index, li);
        let label = kind.name().to_string();
        let c = &cfg.conformal;
        let enbpi_opts = EnbpiOptions::new(c.b, c.agg);

        if cfg.has(Method::Scp) {
            let r = scp_grid(kind, &fit, &calib, &test, grid, &cfg.learner_params, seed)?;
            warnings.extend(r.warnings);
            out.push(((Method::Scp, label.clone()), r.forecast));
        }
        let enbpi = if cfg.has(Method::Enbpi) {
            let r = enbpi_grid(kind, &train, &test, grid, &enbpi_opts, &cfg.learner_params, seed)?;
            warnings.extend(r.warnings.iter().cloned());
            out.push(((Method::Enbpi, label.clone()), r.forecast.clone()));
            Some(r.forecast)
        } else {
            None
        };
        let spci = if cfg.has(Method::Spci) {
            let (_, r) = spci_block(kind, &train, None, &test, cfg, seed)?;
            out.push(((Method::Spci, label.clone()), r.forecast.clone()));
            Some(r.forecast)
        } else {
            None
        };

        if cfg.has(Method::QraR) {
            let fit_len = fit.len();
            let mut members = vec![fit_point(kind, &fit, &cfg.learner_params, seed)?];
            for &w in &cfg.qra.windows {
                let keep = ((fit_len as f64 * w).round() as usize).clamp(1, fit_len);
                members.push(fit_point(kind, &fit.slice(fit_len - keep..fit_len), &cfg.learner_params, seed)?);
            }
            let series = members
                .iter()
                .map(|m| Ok([m.predict(&calib.rows)?, m.predict(&test.rows)?].concat()))
                .collect::<Result<Vec<_>>>()?;
            let labels = (0..members.len()).map(|i| format!("window{i}")).collect();
            let pool = ForecastPool::from_series(labels, &series, calib.targets.clone())?;
            out.push(((Method::QraR, label.clone()), qra_run(&pool, grid, calib.len())?));
        }

        if cfg.has(Method::QraCp) {
            let both = DesignMatrix {
                rows: [calib.rows.clone(), test.rows.clone()].concat(),
                targets: [calib.targets.clone(), test.targets.clone()].concat(),
                feature_names: calib.feature_names.clone(),
                target_index: [calib.target_index.clone(), test.target_index.clone()].concat(),
                timestamps: [calib.timestamps.clone(), test.timestamps.clone()].concat(),
            };
            let scp_center = fit_point(kind, &fit, &cfg.learner_params, seed)?.predict(&both.rows)?;
            let enbpi_center = enbpi_grid(kind, &fit, &both, grid, &enbpi_opts, &cfg.learner_params, seed)?.centers;
            let (calib_run, test_run) = spci_block(kind, &fit, Some(&calib), &test, cfg, seed)?;
            let median = |r: &IntervalRun| r.forecast.level_series(0.5).expect("grid holds the median");
            let spci_med = [median(&calib_run.expect("revealed block given")), median(&test_run)].concat();
            let labels = vec!["scp".into(), "enbpi".into(), "spci".into()];
            let pool = ForecastPool::from_series(labels, &[scp_center, enbpi_center, spci_med], calib.targets.clone())?;
            out.push(((Method::QraCp, label.clone()), qra_run(&pool, grid, calib.len())?));
        }

        if cfg.has(Method::QEns) {
            let (q, e, s) = (
                qr.as_ref().expect("dependency checked"),
                enbpi.as_ref().expect("dependency checked"),
                spci.as_ref().expect("dependency checked"),
            );
            out.push(((Method::QEns, label.clone()), q_ens(q, e, s)?));
        }
    }
    Ok(OriginResult { forecasts: out, warnings })
}

/// Run the backtest on a frame.
pub fn run_backtest(frame: &SeriesFrame, cfg: &BacktestConfig) -> Result<BacktestOutput> {
    cfg.validate()?;
    match cfg.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?
            .install(|| backtest_inner(frame, cfg)),
        None => backtest_inner(frame, cfg),
    }
}

fn backtest_inner(frame: &SeriesFrame, cfg: &BacktestConfig) -> Result<BacktestOutput> {
    let design = build_features(frame, &cfg.lags)?;
    let history = cfg.lags.history();
    let lookahead = cfg.lags.lookahead();
    let spec = &cfg.backtest;
    // frame indices usable as targets
    let usable = frame.len() - lookahead;
    let splits = rolling_splits(usable - history, spec.train_len, spec.step, spec.horizon)?;
    if splits.is_empty() {
        return Err(Error::InsufficientHistory(format!(
            "{} usable periods leave no room for a {}-period training window and a {}-period test block",
            usable - history,
            spec.train_len,
            spec.horizon
        )));
    }
    info!("backtest over {} origins", splits.len());
    let lead_gap = cfg.lags.lead - 1;
    let results = splits
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let train = history + s.train.start..history + s.train.end - lead_gap;
            let test = history + s.test.start..history + s.test.end;
            debug!("origin {i}: train {train:?} test {test:?}");
            run_origin(&design, train, test, i, cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut timestamps = Vec::new();
    let mut truths = Vec::new();
    let mut window_starts = Vec::new();
    for s in &splits {
        let test = design.for_targets(history + s.test.start..history + s.test.end);
        window_starts.push(test.timestamps[0]);
        timestamps.extend(test.timestamps);
        truths.extend(test.targets);
    }

    let mut runs: Vec<RunOutput> = Vec::new();
    let mut warnings = Vec::new();
    for r in results {
        warnings.extend(r.warnings);
        for ((method, learner), f) in r.forecasts {
            match runs.iter_mut().find(|x| x.method == method.name() && x.learner == learner) {
                Some(run) => run.forecast.extend(f)?,
                None => runs.push(RunOutput {
                    method: method.name().to_string(),
                    learner,
                    timestamps: Vec::new(),
                    forecast: f,
                }),
            }
        }
    }
    for run in &mut runs {
        run.timestamps = timestamps.clone();
    }
    let report = build_report(&runs, &truths, &timestamps, &cfg.report_alphas)?;
    Ok(BacktestOutput {
        timestamps,
        truths,
        runs,
        report,
        window_starts,
        warnings,
    })
}
