//! Library-level backtest: synthetic data through every method, persisted
//! and re-read, with the report rebuilt from the files.

use std::collections::BTreeMap;

use priceband::backtest::{run_backtest, BacktestConfig, BacktestSpec, Market, Method, QraParams};
use priceband::conformal::ConformalParams;
use priceband::dataset::{build_features, synth_series, LagSpec, SynthParams};
use priceband::io::{read_forecast_csv, read_truth_csv, write_forecast_csv, write_truth_csv};
use priceband::learners::{LearnerParams, ModelKind};
use priceband::metrics::{build_report, RunOutput};
use priceband::quantile::QuantileGrid;

fn config(threads: Option<usize>) -> BacktestConfig {
    BacktestConfig {
        lags: LagSpec {
            target_lags: vec![24, 25, 48],
            covariate_lags: BTreeMap::new(),
            horizon: 24,
            lead: 1,
        },
        learners: vec![ModelKind::Lear],
        learner_params: LearnerParams::default(),
        methods: Method::ALL.to_vec(),
        grid: QuantileGrid::deciles(),
        backtest: BacktestSpec {
            train_len: 360,
            step: 24,
            horizon: 24,
            market: Market::Dam,
        },
        conformal: ConformalParams {
            b: 10,
            window: 120,
            ..ConformalParams::default()
        },
        qra: QraParams::default(),
        report_alphas: vec![0.1, 0.3],
        seed: 11,
        threads,
    }
}

fn frame() -> priceband::dataset::SeriesFrame {
    let params = SynthParams {
        n: 480,
        noise_drift: 1.0,
        ..SynthParams::default()
    };
    synth_series(&params, 4).unwrap()
}

#[test]
fn every_method_produces_sorted_aligned_forecasts() {
    let cfg = config(Some(1));
    let rows = build_features(&frame(), &cfg.lags).unwrap().rows.len();
    let out = run_backtest(&frame(), &cfg).unwrap();
    assert_eq!(out.window_starts.len(), (rows - 360) / 24);
    assert_eq!(out.truths.len(), out.window_starts.len() * 24);
    assert_eq!(out.runs.len(), Method::ALL.len());
    for run in &out.runs {
        assert_eq!(run.timestamps, out.timestamps, "{}", run.method);
        assert_eq!(run.forecast.grid(), &QuantileGrid::deciles());
        for step in run.forecast.steps() {
            assert!(step.iter().all(|v| v.is_finite()), "{}", run.method);
            assert!(step.windows(2).all(|w| w[0] <= w[1]), "{} not sorted", run.method);
        }
    }
    assert_eq!(out.report.rows.len(), Method::ALL.len() * 2);
    for r in &out.report.rows {
        assert!((0.0..=1.0).contains(&r.coverage));
        assert!(r.mean_width >= 0.0 && r.winkler >= r.mean_width - 1e-9, "{r:?}");
        assert_eq!(r.n, out.truths.len());
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let f = frame();
    let a = run_backtest(&f, &config(Some(1))).unwrap();
    let b = run_backtest(&f, &config(Some(3))).unwrap();
    assert_eq!(a.runs, b.runs);
    assert_eq!(a.report, b.report);
}

#[test]
fn report_rebuilds_from_persisted_files() {
    let out = run_backtest(&frame(), &config(None)).unwrap();
    let mut buf = Vec::new();
    write_truth_csv(&mut buf, &out.timestamps, &out.truths, Some("config_hash=x")).unwrap();
    let (ts, truths) = read_truth_csv(buf.as_slice()).unwrap();
    assert_eq!((&ts, &truths), (&out.timestamps, &out.truths));

    let runs: Vec<RunOutput> = out
        .runs
        .iter()
        .map(|r| {
            let mut buf = Vec::new();
            write_forecast_csv(&mut buf, &r.timestamps, &r.forecast, None).unwrap();
            let (timestamps, forecast) = read_forecast_csv(buf.as_slice()).unwrap();
            RunOutput {
                method: r.method.clone(),
                learner: r.learner.clone(),
                timestamps,
                forecast,
            }
        })
        .collect();
    let rebuilt = build_report(&runs, &truths, &ts, &[0.1, 0.3]).unwrap();
    assert_eq!(rebuilt, out.report);
}
