//! Market data: validated time series frames, lagged design matrices,
//! rolling-origin splits and a synthetic price generator.

mod csv_io;
mod features;
mod splits;
mod synth;

use std::collections::BTreeMap;

use chrono::{DateTime, TimeDelta, Utc};

pub use csv_io::{load_csv, read_csv, write_frame_csv, CsvSchema, MissingPolicy};
pub use features::{build_features, DesignMatrix, LagSpec};
pub use splits::{rolling_splits, Split};
pub use synth::{synth_series, SynthParams};

use crate::error::{Error, Result};

/// Timestamped target series plus exogenous covariate columns on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    timestamps: Vec<DateTime<Utc>>,
    period: TimeDelta,
    target_name: String,
    target: Vec<f64>,
    covariates: BTreeMap<String, Vec<f64>>,
}

impl SeriesFrame {
    /// Validates ordering, spacing and column lengths. When `period` is
    /// `None` it is inferred from the first gap (one hour for a single row).
    pub fn new(
        timestamps: Vec<DateTime<Utc>>,
        period: Option<TimeDelta>,
        target_name: impl Into<String>,
        target: Vec<f64>,
        covariates: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if target.len() != n {
            return Err(Error::Shape(format!("target has {} values for {n} timestamps", target.len())));
        }
        for (name, col) in &covariates {
            if col.len() != n {
                return Err(Error::Shape(format!("covariate '{name}' has {} values for {n} timestamps", col.len())));
            }
        }
        if let Some(i) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite target at {}", timestamps[i])));
        }
        for (name, col) in &covariates {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("non-finite '{name}' at {}", timestamps[i])));
            }
        }
        for w in timestamps.windows(2) {
            if w[1] == w[0] {
                return Err(Error::Grid(format!("duplicate timestamp {}", w[0].to_rfc3339())));
            }
            if w[1] < w[0] {
                return Err(Error::Grid(format!("timestamps not increasing at {}", w[1].to_rfc3339())));
            }
        }
        let period = match period {
            Some(p) => p,
            None if n >= 2 => timestamps[1] - timestamps[0],
            None => TimeDelta::minutes(60),
        };
        if period <= TimeDelta::zero() {
            return Err(Error::Grid("period must be positive".into()));
        }
        for w in timestamps.windows(2) {
            let gap = w[1] - w[0];
            if gap != period {
                return Err(Error::Grid(format!(
                    "gap of {} min between {} and {}, expected {} min",
                    gap.num_minutes(),
                    w[0].to_rfc3339(),
                    w[1].to_rfc3339(),
                    period.num_minutes()
                )));
            }
        }
        Ok(Self {
            timestamps,
            period,
            target_name: target_name.into(),
            target,
            covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn period(&self) -> TimeDelta {
        self.period
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn covariates(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&[f64]> {
        self.covariates.get(name).map(Vec::as_slice)
    }
}
