//! Quantile primitives shared by every interval producer: the pinball loss,
//! empirical quantile conventions, linear quantile regression and repair of
//! crossing quantiles.

mod empirical;
mod linear;

pub use empirical::{empirical_quantile, quantile_sorted, weighted_quantile, QuantileConvention};
pub use linear::{check_loss, fit_linear_qr, fit_linear_qr_rows, LinearQuantileModel};

use serde::{Deserialize, Serialize};

use crate::conformal::PredictionInterval;
use crate::error::{Error, Result};

const LEVEL_TOL: f64 = 1e-9;

/// Pinball loss of quantile prediction `qhat` at level `alpha` for outcome `y`.
#[inline]
pub fn pinball(qhat: f64, y: f64, alpha: f64) -> f64 {
    if y <= qhat {
        (1.0 - alpha) * (qhat - y)
    } else {
        alpha * (y - qhat)
    }
}

/// Sorted set of quantile levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("quantile grid is empty".into()));
        }
        for &l in &levels {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::Config(format!("quantile level {l} outside (0, 1)")));
            }
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("quantile levels must be strictly increasing".into()));
        }
        Ok(Self { levels })
    }

    /// 0.1, 0.2, ..., 0.9
    pub fn deciles() -> Self {
        Self {
            levels: (1..=9).map(|i| i as f64 / 10.0).collect(),
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn index_of(&self, level: f64) -> Option<usize> {
        self.levels.iter().position(|&l| (l - level).abs() < LEVEL_TOL)
    }

    /// Lower levels `alpha < 0.5` whose mirror `1 - alpha` is also present.
    pub fn symmetric_pairs(&self) -> Vec<f64> {
        self.levels
            .iter()
            .copied()
            .filter(|&a| a < 0.5 - LEVEL_TOL && self.index_of(1.0 - a).is_some())
            .collect()
    }

    pub fn require_pair(&self, alpha: f64) -> Result<(usize, usize)> {
        match (self.index_of(alpha), self.index_of(1.0 - alpha)) {
            (Some(lo), Some(hi)) => Ok((lo, hi)),
            _ => Err(Error::Config(format!(
                "quantile grid lacks the pair ({alpha}, {})",
                1.0 - alpha
            ))),
        }
    }
}

impl Default for QuantileGrid {
    fn default() -> Self {
        Self::deciles()
    }
}

impl TryFrom<Vec<f64>> for QuantileGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantileGrid> for Vec<f64> {
    fn from(g: QuantileGrid) -> Self {
        g.levels
    }
}

/// Per time step, one predicted value for every level of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    grid: QuantileGrid,
    values: Vec<Vec<f64>>,
}

impl QuantileForecast {
    pub fn new(grid: QuantileGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(bad) = values.iter().position(|v| v.len() != grid.len()) {
            return Err(Error::Shape(format!(
                "step {bad} has {} quantiles, grid has {}",
                values[bad].len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn empty(grid: QuantileGrid) -> Self {
        Self { grid, values: Vec::new() }
    }

    pub fn grid(&self) -> &QuantileGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn steps(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.values[t]
    }

    pub fn value(&self, t: usize, level: f64) -> Option<f64> {
        self.grid.index_of(level).map(|k| self.values[t][k])
    }

    /// Column of values for one level.
    pub fn level_series(&self, level: f64) -> Option<Vec<f64>> {
        let k = self.grid.index_of(level)?;
        Some(self.values.iter().map(|v| v[k]).collect())
    }

    pub fn interval(&self, t: usize, alpha: f64) -> Result<PredictionInterval> {
        let (lo, hi) = self.grid.require_pair(alpha)?;
        Ok(PredictionInterval::new_unchecked(self.values[t][lo], self.values[t][hi], alpha))
    }

    pub fn intervals(&self, alpha: f64) -> Result<Vec<PredictionInterval>> {
        (0..self.len()).map(|t| self.interval(t, alpha)).collect()
    }

    pub fn extend(&mut self, other: QuantileForecast) -> Result<()> {
        if other.grid != self.grid {
            return Err(Error::Shape("cannot concatenate forecasts on different grids".into()));
        }
        self.values.extend(other.values);
        Ok(())
    }

    pub fn is_monotone(&self) -> bool {
        self.values.iter().all(|v| v.windows(2).all(|w| w[0] <= w[1]))
    }
}

/// Sort each step's values so quantiles are non-decreasing in level.
pub fn rearrange(forecast: &QuantileForecast) -> QuantileForecast {
    let mut out = forecast.clone();
    for v in &mut out.values {
        v.sort_by(f64::total_cmp);
    }
    out
}
