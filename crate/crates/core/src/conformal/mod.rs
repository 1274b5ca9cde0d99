//! Conformal interval engines: split conformal (SCP), bootstrap ensembles
//! (EnbPI) and sequential residual quantile forests (SPCI).

mod enbpi;
mod scp;
mod spci;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use enbpi::{enbpi_grid, enbpi_run, enbpi_with_members, EnbpiAgg, EnbpiOptions};
pub use scp::{scp_from_predictions, scp_grid, scp_lambda, scp_run};
pub use spci::{spci_from_residuals, spci_grid, spci_run, SpciMode, SpciOptions};

use crate::error::{Error, Result};
use crate::learners::QrfParams;
use crate::quantile::{QuantileForecast, QuantileGrid};

/// Closed interval `[lower, upper]` with nominal coverage `1 - 2 alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
}

impl PredictionInterval {
    pub fn new(lower: f64, upper: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::Config(format!("interval alpha {alpha} outside (0, 0.5)")));
        }
        if !(lower <= upper) {
            return Err(Error::Shape(format!("interval lower {lower} above upper {upper}")));
        }
        Ok(Self { lower, upper, alpha })
    }

    /// No ordering check; used for raw (possibly crossing) quantile pairs.
    pub fn new_unchecked(lower: f64, upper: f64, alpha: f64) -> Self {
        Self { lower, upper, alpha }
    }

    pub fn nominal(&self) -> f64 {
        1.0 - 2.0 * self.alpha
    }

    pub fn level_pair(&self) -> (f64, f64) {
        (self.alpha, 1.0 - self.alpha)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// Rolling window of residuals in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBuffer {
    window: usize,
    values: VecDeque<f64>,
}

impl ResidualBuffer {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("residual window must be >= 1".into()));
        }
        Ok(Self {
            window,
            values: VecDeque::with_capacity(window),
        })
    }

    /// Buffer holding the trailing `window` values of `seed`.
    pub fn seeded(window: usize, seed: &[f64]) -> Result<Self> {
        let mut b = Self::new(window)?;
        for &r in &seed[seed.len().saturating_sub(window)..] {
            b.push(r);
        }
        Ok(b)
    }

    /// Append a residual, returning the evicted oldest one once full.
    pub fn push(&mut self, r: f64) -> Option<f64> {
        let out = if self.values.len() == self.window {
            self.values.pop_front()
        } else {
            None
        };
        self.values.push_back(r);
        out
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn signed(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    pub fn absolute(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.abs()).collect()
    }

    /// Autoregressive design over the buffer: row `[r_{i-1}, .., r_{i-lags}]`
    /// predicts `r_i` (or `|r_i|` when `absolute_target`).
    pub fn lagged(&self, lags: usize, absolute_target: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
        self.lagged_with_gap(lags, 1, absolute_target)
    }

    /// Like [`lagged`](Self::lagged) with the most recent feature `gap`
    /// steps back: row `[r_{i-gap}, .., r_{i-gap-lags+1}]` predicts `r_i`.
    pub fn lagged_with_gap(&self, lags: usize, gap: usize, absolute_target: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
        let v = &self.values;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in (gap + lags - 1)..v.len() {
            rows.push((0..lags).map(|l| v[i - gap - l]).collect());
            y.push(if absolute_target { v[i].abs() } else { v[i] });
        }
        (rows, y)
    }

    /// Feature row for the next, not yet observed, residual.
    pub fn next_features(&self, lags: usize) -> Vec<f64> {
        self.features_ahead(lags, 1, 0)
    }

    /// Feature row, under a `gap`-step design, for the residual `ahead`
    /// steps past the next one. Requires `ahead < gap`.
    pub fn features_ahead(&self, lags: usize, gap: usize, ahead: usize) -> Vec<f64> {
        let n = self.values.len();
        let last = n + ahead - gap;
        (0..lags).map(|l| self.values[last - l]).collect()
    }
}

/// Output of an interval engine on a test block.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRun {
    /// Point predictions of the base model (or ensemble mean).
    pub centers: Vec<f64>,
    /// Quantiles for every grid level, already rearranged.
    pub forecast: QuantileForecast,
    /// `(alpha, lambda)` for engines with one margin per level pair.
    pub margins: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

impl IntervalRun {
    pub fn intervals(&self, alpha: f64) -> Result<Vec<PredictionInterval>> {
        self.forecast.intervals(alpha)
    }
}

/// Engine parameters, shared by the backtest and the CLI (`conformal.*`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConformalParams {
    /// Trailing fraction of each training window held out for SCP calibration.
    pub calib_fraction: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub agg: EnbpiAgg,
    pub window: usize,
    pub resid_lags: usize,
    pub mode: SpciMode,
    pub refit_every: usize,
    pub qrf: QrfParams,
}

impl Default for ConformalParams {
    fn default() -> Self {
        Self {
            calib_fraction: 0.25,
            b: 25,
            agg: EnbpiAgg::MeanMargin,
            window: 200,
            resid_lags: 8,
            mode: SpciMode::Signed,
            refit_every: 1,
            qrf: QrfParams::default(),
        }
    }
}

impl ConformalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.calib_fraction > 0.0 && self.calib_fraction < 1.0) {
            return Err(Error::Config("conformal.calib_fraction must lie in (0, 1)".into()));
        }
        if self.b == 0 {
            return Err(Error::Config("conformal.B must be >= 1".into()));
        }
        if self.resid_lags == 0 || self.window <= self.resid_lags {
            return Err(Error::Config("conformal.window must exceed conformal.resid_lags >= 1".into()));
        }
        if self.refit_every == 0 {
            return Err(Error::Config("conformal.refit_every must be >= 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Config(format!("alpha {alpha} outside (0, 0.5)")));
    }
    Ok(())
}

/// Grid `{alpha, 1 - alpha}` for single-pair entry points.
pub(crate) fn pair_grid(alpha: f64) -> Result<QuantileGrid> {
    check_alpha(alpha)?;
    QuantileGrid::new(vec![alpha, 1.0 - alpha])
}

/// Quantiles `center -/+ margin(min(p, 1 - p))` for every grid level; the
/// median level gets the center itself.
pub(crate) fn symmetric_forecast(
    centers: &[f64],
    grid: &QuantileGrid,
    mut margin: impl FnMut(f64) -> Result<f64>,
) -> Result<(QuantileForecast, Vec<(f64, f64)>)> {
    let mut offsets = Vec::with_capacity(grid.len());
    let mut margins = Vec::new();
    for &p in grid.levels() {
        let a = p.min(1.0 - p);
        if (0.5 - a).abs() < 1e-12 {
            offsets.push(0.0);
            continue;
        }
        let m = margin(a)?;
        if p < 0.5 {
            margins.push((a, m));
            offsets.push(-m);
        } else {
            offsets.push(m);
        }
    }
    let values = centers
        .iter()
        .map(|c| offsets.iter().map(|o| c + o).collect())
        .collect();
    Ok((QuantileForecast::new(grid.clone(), values)?, margins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn interval_basics() {
        let i = PredictionInterval::new(1.0, 3.0, 0.1).unwrap();
        assert!((i.nominal() - 0.8).abs() < 1e-15);
        assert_eq!(i.width(), 2.0);
        assert!(i.contains(1.0) && i.contains(3.0) && !i.contains(3.5));
        assert!(PredictionInterval::new(3.0, 1.0, 0.1).is_err());
        assert!(PredictionInterval::new(1.0, 3.0, 0.5).is_err());
    }

    #[test]
    fn buffer_lagged_design() {
        let b = ResidualBuffer::seeded(5, &[9.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(b.signed(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let (rows, y) = b.lagged(2, false);
        assert_eq!(rows, vec![vec![2.0, 1.0], vec![3.0, 2.0], vec![4.0, 3.0]]);
        assert_eq!(y, vec![3.0, 4.0, 5.0]);
        assert_eq!(b.next_features(2), vec![5.0, 4.0]);
        let (rows, y) = b.lagged_with_gap(2, 2, false);
        assert_eq!(rows, vec![vec![2.0, 1.0], vec![3.0, 2.0]]);
        assert_eq!(y, vec![4.0, 5.0]);
        assert_eq!(b.features_ahead(2, 2, 0), vec![4.0, 3.0]);
        assert_eq!(b.features_ahead(2, 2, 1), vec![5.0, 4.0]);
    }

    proptest! {
        #[test]
        fn buffer_is_fifo_queue(window in 1usize..20, vals in proptest::collection::vec(-10.0f64..10.0, 0..60)) {
            let mut b = ResidualBuffer::new(window).unwrap();
            for (i, &v) in vals.iter().enumerate() {
                let evicted = b.push(v);
                if i >= window {
                    prop_assert_eq!(evicted, Some(vals[i - window]));
                } else {
                    prop_assert_eq!(evicted, None);
                }
                prop_assert_eq!(b.len(), (i + 1).min(window));
            }
            let start = vals.len().saturating_sub(window);
            prop_assert_eq!(b.signed(), vals[start..].to_vec());
        }
    }
}
