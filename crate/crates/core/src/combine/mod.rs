//! Forecast combination: quantile regression averaging over point-forecast
//! pools and the equal-weight Q-Ens average.

use log::debug;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quantile::{fit_linear_qr_rows, rearrange, QuantileForecast, QuantileGrid};

/// Point forecasts from `M` members per step. The first `truths.len()` steps
/// form the calibration region; the remaining steps are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPool {
    labels: Vec<String>,
    members: Vec<Vec<f64>>,
    truths: Vec<f64>,
}

impl ForecastPool {
    /// `members[t]` holds the `M` forecasts for step `t`.
    pub fn new(labels: Vec<String>, members: Vec<Vec<f64>>, truths: Vec<f64>) -> Result<Self> {
        let m = labels.len();
        if m == 0 {
            return Err(Error::Config("forecast pool needs at least one member".into()));
        }
        if let Some(t) = members.iter().position(|v| v.len() != m) {
            return Err(Error::Shape(format!("pool step {t} has {} forecasts for {m} members", members[t].len())));
        }
        if truths.len() > members.len() {
            return Err(Error::Alignment("pool has more truths than forecast steps".into()));
        }
        Ok(Self { labels, members, truths })
    }

    /// Pool from per-member series over the same steps.
    pub fn from_series(labels: Vec<String>, series: &[Vec<f64>], truths: Vec<f64>) -> Result<Self> {
        if series.len() != labels.len() {
            return Err(Error::Shape("one series per pool member required".into()));
        }
        let len = series.first().map_or(0, Vec::len);
        if series.iter().any(|s| s.len() != len) {
            return Err(Error::Shape("pool member series differ in length".into()));
        }
        let members = (0..len).map(|t| series.iter().map(|s| s[t]).collect()).collect();
        Self::new(labels, members, truths)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn width(&self) -> usize {
        self.labels.len()
    }

    pub fn calib_steps(&self) -> usize {
        self.truths.len()
    }

    pub fn eval_steps(&self) -> usize {
        self.members.len() - self.truths.len()
    }
}

/// Quantile regression of the truths on the member forecasts over the last
/// `calib_len` calibration steps, one fit per level, applied to the
/// evaluation steps and rearranged.
pub fn qra_run(pool: &ForecastPool, grid: &QuantileGrid, calib_len: usize) -> Result<QuantileForecast> {
    let m = pool.width();
    if calib_len < m + 2 {
        return Err(Error::Config(format!(
            "QRA calibration length {calib_len} must be at least members + 2 = {}",
            m + 2
        )));
    }
    if calib_len > pool.calib_steps() {
        return Err(Error::InsufficientHistory(format!(
            "QRA needs {calib_len} calibration steps, pool has {}",
            pool.calib_steps()
        )));
    }
    let end = pool.calib_steps();
    let rows = &pool.members[end - calib_len..end];
    let y = &pool.truths[end - calib_len..end];
    let eval = &pool.members[end..];
    let per_level = grid
        .levels()
        .par_iter()
        .map(|&a| {
            let model = fit_linear_qr_rows(rows, y, a)?;
            for w in &model.warnings {
                debug!("QRA level {a}: {w}");
            }
            model.predict(eval)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let values = (0..eval.len())
        .map(|t| per_level.iter().map(|col| col[t]).collect())
        .collect();
    Ok(rearrange(&QuantileForecast::new(grid.clone(), values)?))
}

/// Equal-weight mean of three forecasts before any crossing repair. Each
/// mean sums the three values in ascending order so the result does not
/// depend on argument order.
pub fn q_ens_raw(a: &QuantileForecast, b: &QuantileForecast, c: &QuantileForecast) -> Result<QuantileForecast> {
    if a.grid() != b.grid() || a.grid() != c.grid() {
        return Err(Error::Shape("Q-Ens inputs use different quantile grids".into()));
    }
    if a.len() != b.len() || a.len() != c.len() {
        return Err(Error::Shape(format!(
            "Q-Ens inputs cover {}, {} and {} steps",
            a.len(),
            b.len(),
            c.len()
        )));
    }
    let values = (0..a.len())
        .map(|t| {
            (0..a.grid().len())
                .map(|k| {
                    let mut v = [a.step(t)[k], b.step(t)[k], c.step(t)[k]];
                    v.sort_by(f64::total_cmp);
                    (v[0] + v[1] + v[2]) / 3.0
                })
                .collect()
        })
        .collect();
    QuantileForecast::new(a.grid().clone(), values)
}

/// Q-Ens: mean of the QR, EnbPI and SPCI quantiles, rearranged.
pub fn q_ens(qr: &QuantileForecast, enbpi: &QuantileForecast, spci: &QuantileForecast) -> Result<QuantileForecast> {
    Ok(rearrange(&q_ens_raw(qr, enbpi, spci)?))
}
