//! Interval and quantile scores plus the per-method evaluation report.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::conformal::PredictionInterval;
use crate::error::{Error, Result};
use crate::quantile::{pinball, QuantileForecast};

/// Mean pinball loss over every step and grid level.
pub fn aps(forecast: &QuantileForecast, truths: &[f64]) -> Result<f64> {
    if forecast.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} forecast steps for {} truths",
            forecast.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Shape("APS of an empty evaluation region".into()));
    }
    let levels = forecast.grid().levels();
    let total: f64 = truths
        .iter()
        .enumerate()
        .map(|(t, &y)| {
            forecast
                .step(t)
                .iter()
                .zip(levels)
                .map(|(&q, &a)| pinball(q, y, a))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (truths.len() * levels.len()) as f64)
}

/// Fraction of truths inside their closed interval.
pub fn coverage(intervals: &[PredictionInterval], truths: &[f64]) -> Result<f64> {
    check_aligned(intervals, truths)?;
    let hit = intervals.iter().zip(truths).filter(|(i, &y)| i.contains(y)).count();
    Ok(hit as f64 / truths.len() as f64)
}

pub fn interval_width(interval: &PredictionInterval) -> f64 {
    interval.width()
}

pub fn mean_width(intervals: &[PredictionInterval]) -> f64 {
    if intervals.is_empty() {
        return 0.0;
    }
    intervals.iter().map(PredictionInterval::width).sum::<f64>() / intervals.len() as f64
}

/// Winkler score: the width plus `2 / tau` times the distance to the
/// interval when the outcome falls outside.
pub fn winkler(interval: &PredictionInterval, y: f64, tau: f64) -> f64 {
    let w = interval.width();
    if y < interval.lower {
        w + 2.0 / tau * (interval.lower - y)
    } else if y > interval.upper {
        w + 2.0 / tau * (y - interval.upper)
    } else {
        w
    }
}

/// Mean Winkler score with `tau` defaulting to each interval's `2 alpha`.
pub fn mean_winkler(intervals: &[PredictionInterval], truths: &[f64], tau: Option<f64>) -> Result<f64> {
    check_aligned(intervals, truths)?;
    if let Some(t) = tau {
        if !(t > 0.0) {
            return Err(Error::Config(format!("winkler tau must be > 0, got {t}")));
        }
    }
    let total: f64 = intervals
        .iter()
        .zip(truths)
        .map(|(i, &y)| winkler(i, y, tau.unwrap_or(2.0 * i.alpha)))
        .sum();
    Ok(total / truths.len() as f64)
}

fn check_aligned(intervals: &[PredictionInterval], truths: &[f64]) -> Result<()> {
    if intervals.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} intervals for {} truths",
            intervals.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Shape("no evaluation steps".into()));
    }
    Ok(())
}

/// One method's quantile forecasts over the evaluation region.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub method: String,
    pub learner: String,
    pub timestamps: Vec<DateTime<Utc>>,
    pub forecast: QuantileForecast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Best,
    Worst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub learner: String,
    /// Formatted as `lower-upper`, e.g. `0.1-0.9`.
    pub level_pair: String,
    pub aps: f64,
    pub mean_width: f64,
    pub coverage: f64,
    pub winkler: f64,
    pub n: usize,
    /// Lowest / highest mean Winkler among the methods of one learner and
    /// level pair.
    pub flag: Option<Flag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: Option<String>,
    pub rows: Vec<ReportRow>,
}

pub fn format_pair(alpha: f64) -> String {
    format!("{}-{}", round_level(alpha), round_level(1.0 - alpha))
}

fn round_level(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Score every run at every requested `alpha` (interval `(alpha, 1 - alpha)`).
/// Rows come out sorted by learner, method and level pair.
pub fn build_report(runs: &[RunOutput], truths: &[f64], timestamps: &[DateTime<Utc>], alphas: &[f64]) -> Result<EvalReport> {
    if truths.len() != timestamps.len() {
        return Err(Error::Alignment("truths and timestamps differ in length".into()));
    }
    let mut rows = Vec::new();
    for run in runs {
        if run.timestamps != timestamps {
            return Err(Error::Alignment(format!(
                "run {}/{} does not cover the evaluation region",
                run.method, run.learner
            )));
        }
        let a = aps(&run.forecast, truths)?;
        for &alpha in alphas {
            let iv = run.forecast.intervals(alpha)?;
            rows.push(ReportRow {
                method: run.method.clone(),
                learner: run.learner.clone(),
                level_pair: format_pair(alpha),
                aps: a,
                mean_width: mean_width(&iv),
                coverage: coverage(&iv, truths)?,
                winkler: mean_winkler(&iv, truths, None)?,
                n: truths.len(),
                flag: None,
            });
        }
    }
    rows.sort_by(|x, y| {
        (&x.learner, &x.method, &x.level_pair).cmp(&(&y.learner, &y.method, &y.level_pair))
    });
    flag_rows(&mut rows);
    Ok(EvalReport { config_hash: None, rows })
}

fn flag_rows(rows: &mut [ReportRow]) {
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        groups.entry((r.learner.clone(), r.level_pair.clone())).or_default().push(i);
    }
    for idx in groups.values() {
        if idx.len() < 2 {
            continue;
        }
        let by = |f: fn(f64, f64) -> bool| {
            idx.iter().copied().fold(idx[0], |b, i| if f(rows[i].winkler, rows[b].winkler) { i } else { b })
        };
        let best = by(|a, b| a < b);
        let worst = by(|a, b| a > b);
        if best != worst {
            rows[best].flag = Some(Flag::Best);
            rows[worst].flag = Some(Flag::Worst);
        }
    }
}

const CSV_HEADER: [&str; 9] = ["method", "learner", "level_pair", "aps", "mean_width", "coverage", "winkler", "n", "flag"];

impl EvalReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        if let Some(h) = &self.config_hash {
            writeln!(out, "# config_hash={h}").map_err(|e| Error::io("<report>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            let flag = match r.flag {
                Some(Flag::Best) => "best",
                Some(Flag::Worst) => "worst",
                None => "",
            };
            w.write_record([
                r.method.clone(),
                r.learner.clone(),
                r.level_pair.clone(),
                r.aps.to_string(),
                r.mean_width.to_string(),
                r.coverage.to_string(),
                r.winkler.to_string(),
                r.n.to_string(),
                flag.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn find(&self, method: &str, learner: &str, alpha: f64) -> Option<&ReportRow> {
        let pair = format_pair(alpha);
        self.rows
            .iter()
            .find(|r| r.method == method && r.learner == learner && r.level_pair == pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantile::{rearrange, QuantileGrid};
    use proptest::prelude::*;

    fn iv(lo: f64, hi: f64) -> PredictionInterval {
        PredictionInterval::new_unchecked(lo, hi, 0.1)
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball(10.0, 10.0, 0.3), 0.0);
        assert!((pinball(10.0, 20.0, 0.1) - 1.0).abs() < 1e-12);
        assert!((pinball(10.0, 4.0, 0.1) - 5.4).abs() < 1e-12);
    }

    #[test]
    fn aps_examples() {
        let g = QuantileGrid::new(vec![0.1, 0.9]).unwrap();
        let f = QuantileForecast::new(g.clone(), vec![vec![10.0, 10.0]]).unwrap();
        assert!((aps(&f, &[20.0]).unwrap() - 5.0).abs() < 1e-12);
        let exact = QuantileForecast::new(g, vec![vec![3.0, 3.0], vec![4.0, 4.0]]).unwrap();
        assert_eq!(aps(&exact, &[3.0, 4.0]).unwrap(), 0.0);
        assert!(matches!(aps(&exact, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn coverage_examples() {
        let ivs = vec![iv(0.0, 2.0); 4];
        assert_eq!(coverage(&ivs, &[1.0, 1.0, 3.0, 1.0]).unwrap(), 0.75);
        assert_eq!(coverage(&ivs, &[0.0, 2.0, 0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(coverage(&[iv(5.0, 5.0)], &[5.0]).unwrap(), 1.0);
    }

    #[test]
    fn winkler_examples() {
        let i = iv(10.0, 20.0);
        assert_eq!(winkler(&i, 15.0, 0.2), 10.0);
        assert!((winkler(&i, 7.0, 0.2) - 40.0).abs() < 1e-9);
        assert!((winkler(&i, 25.0, 0.2) - 60.0).abs() < 1e-9);
        assert!((mean_winkler(&[i], &[7.0], None).unwrap() - 40.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn median_pinball_is_half_abs(q in -1e4f64..1e4, y in -1e4f64..1e4) {
            prop_assert!((pinball(q, y, 0.5) - (y - q).abs() / 2.0).abs() <= 1e-12 * (1.0 + (y - q).abs()));
        }

        #[test]
        fn winkler_at_least_width(lo in -100f64..100.0, w in 0f64..50.0, y in -200f64..200.0, tau in 0.01f64..1.0) {
            let i = iv(lo, lo + w);
            let s = winkler(&i, y, tau);
            prop_assert!(s >= i.width());
            if i.contains(y) {
                prop_assert_eq!(s, i.width());
            }
        }

        #[test]
        fn aps_permutation_and_split(vals in proptest::collection::vec(-50f64..50.0, 12), ys in proptest::collection::vec(-50f64..50.0, 4)) {
            let g = QuantileGrid::new(vec![0.1, 0.5, 0.9]).unwrap();
            let steps: Vec<Vec<f64>> = vals.chunks(3).map(|c| c.to_vec()).collect();
            let f = QuantileForecast::new(g.clone(), steps.clone()).unwrap();
            let full = aps(&f, &ys).unwrap();
            let rev = QuantileForecast::new(g.clone(), steps.iter().rev().cloned().collect()).unwrap();
            let ys_rev: Vec<f64> = ys.iter().rev().copied().collect();
            prop_assert!((aps(&rev, &ys_rev).unwrap() - full).abs() < 1e-9);
            let a = QuantileForecast::new(g.clone(), steps[..1].to_vec()).unwrap();
            let b = QuantileForecast::new(g, steps[1..].to_vec()).unwrap();
            let mixed = (aps(&a, &ys[..1]).unwrap() + 3.0 * aps(&b, &ys[1..]).unwrap()) / 4.0;
            prop_assert!((mixed - full).abs() < 1e-9);
        }

        #[test]
        fn nested_coverage(vals in proptest::collection::vec(-50f64..50.0, 90), ys in proptest::collection::vec(-50f64..50.0, 10)) {
            let steps: Vec<Vec<f64>> = vals.chunks(9).map(|c| c.to_vec()).collect();
            let f = rearrange(&QuantileForecast::new(QuantileGrid::deciles(), steps).unwrap());
            let inner = coverage(&f.intervals(0.3).unwrap(), &ys).unwrap();
            let outer = coverage(&f.intervals(0.1).unwrap(), &ys).unwrap();
            prop_assert!(inner <= outer);
        }
    }

    fn run(method: &str, offset: f64) -> RunOutput {
        let ts: Vec<DateTime<Utc>> = (0..10).map(|i| DateTime::<Utc>::UNIX_EPOCH + chrono::TimeDelta::hours(i)).collect();
        let steps = (0..10).map(|i| (1..=9).map(|k| i as f64 + k as f64 - 5.0 + offset).collect()).collect();
        RunOutput {
            method: method.into(),
            learner: "lear".into(),
            timestamps: ts,
            forecast: QuantileForecast::new(QuantileGrid::deciles(), steps).unwrap(),
        }
    }

    #[test]
    fn report_matches_primitives() {
        let r = run("scp", 0.0);
        let truths: Vec<f64> = (0..10).map(|i| i as f64 + if i % 3 == 0 { 6.0 } else { 0.5 }).collect();
        let rep = build_report(std::slice::from_ref(&r), &truths, &r.timestamps, &[0.1, 0.3]).unwrap();
        assert_eq!(rep.rows.len(), 2);
        let row = rep.find("scp", "lear", 0.1).unwrap();
        let iv = r.forecast.intervals(0.1).unwrap();
        assert_eq!(row.n, 10);
        assert_eq!(row.aps, aps(&r.forecast, &truths).unwrap());
        assert_eq!(row.coverage, coverage(&iv, &truths).unwrap());
        assert_eq!(row.winkler, mean_winkler(&iv, &truths, None).unwrap());
        assert_eq!(row.level_pair, "0.1-0.9");
    }

    #[test]
    fn identical_runs_identical_rows_and_flags() {
        let truths: Vec<f64> = (0..10).map(|i| i as f64 + 0.3).collect();
        let runs = vec![run("a", 0.0), run("b", 0.0), run("c", 10.0)];
        let rep = build_report(&runs, &truths, &runs[0].timestamps, &[0.1]).unwrap();
        let (a, b) = (&rep.rows[0], &rep.rows[1]);
        assert_eq!((a.aps, a.winkler, a.coverage), (b.aps, b.winkler, b.coverage));
        assert_eq!(rep.rows[2].flag, Some(Flag::Worst));
        let mut other = runs[0].clone();
        other.timestamps.reverse();
        assert!(matches!(build_report(&[other], &truths, &runs[0].timestamps, &[0.1]), Err(Error::Alignment(_))));
    }

    #[test]
    fn csv_has_declared_columns() {
        let truths: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = run("qr", 0.0);
        let mut rep = build_report(std::slice::from_ref(&r), &truths, &r.timestamps, &[0.1]).unwrap();
        rep.config_hash = Some("abc".into());
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("# config_hash=abc"));
        assert_eq!(lines.next(), Some("method,learner,level_pair,aps,mean_width,coverage,winkler,n,flag"));
    }
}
