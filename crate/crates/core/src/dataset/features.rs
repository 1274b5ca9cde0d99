use std::collections::BTreeMap;
use std::ops::Range;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};

/// Which lagged values form the features of a forecast row.
///
/// Target lags are counted back from the predicted period. Covariate lags may
/// be zero or negative: those columns are treated as known in advance (e.g.
/// system-operator forecasts), so `0` is the value published for the
/// predicted period itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagSpec {
    pub target_lags: Vec<usize>,
    #[serde(default)]
    pub covariate_lags: BTreeMap<String, Vec<i64>>,
    #[serde(default = "one")]
    pub horizon: usize,
    #[serde(default = "one")]
    pub lead: usize,
}

fn one() -> usize {
    1
}

impl LagSpec {
    pub fn new(target_lags: Vec<usize>, horizon: usize, lead: usize) -> Self {
        Self {
            target_lags,
            covariate_lags: BTreeMap::new(),
            horizon,
            lead,
        }
    }

    /// Smallest admissible target lag. Every period of a `horizon`-long
    /// window starting `lead` periods after the last observation must be
    /// predictable from data observed at the origin.
    pub fn min_target_lag(&self) -> usize {
        self.lead + self.horizon - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.lead == 0 {
            return Err(Error::Config("lead must be at least 1".into()));
        }
        let min = self.min_target_lag();
        if let Some(&bad) = self.target_lags.iter().find(|&&l| l < min) {
            return Err(Error::Config(format!(
                "target lag {bad} leaks future values (lead {} with horizon {} needs lags >= {min})",
                self.lead, self.horizon
            )));
        }
        Ok(())
    }

    pub fn history(&self) -> usize {
        let t = self.target_lags.iter().copied().max().unwrap_or(0);
        let c = self
            .covariate_lags
            .values()
            .flatten()
            .copied()
            .filter(|&l| l > 0)
            .max()
            .unwrap_or(0) as usize;
        t.max(c)
    }

    pub fn lookahead(&self) -> usize {
        self.covariate_lags
            .values()
            .flatten()
            .copied()
            .filter(|&l| l < 0)
            .map(|l| (-l) as usize)
            .max()
            .unwrap_or(0)
    }
}

/// Supervised rows aligned to frame periods.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub feature_names: Vec<String>,
    /// Frame index of each row's target.
    pub target_index: Vec<usize>,
    pub timestamps: Vec<DateTime<Utc>>,
}

impl DesignMatrix {
    /// Bare matrix without frame alignment (indices are row numbers).
    pub fn from_rows(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::Shape(format!("{} rows for {} targets", rows.len(), targets.len())));
        }
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged design rows".into()));
        }
        let n = rows.len();
        let epoch = DateTime::<Utc>::UNIX_EPOCH;
        Ok(Self {
            feature_names: (0..width).map(|j| format!("x{j}")).collect(),
            rows,
            targets,
            target_index: (0..n).collect(),
            timestamps: (0..n).map(|i| epoch + chrono::TimeDelta::hours(i as i64)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn select(&self, idx: &[usize]) -> DesignMatrix {
        DesignMatrix {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            feature_names: self.feature_names.clone(),
            target_index: idx.iter().map(|&i| self.target_index[i]).collect(),
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
        }
    }

    pub fn slice(&self, range: Range<usize>) -> DesignMatrix {
        let idx: Vec<usize> = range.collect();
        self.select(&idx)
    }

    /// Rows whose target lies in `frame_range` (frame indices).
    pub fn for_targets(&self, frame_range: Range<usize>) -> DesignMatrix {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| frame_range.contains(&self.target_index[i]))
            .collect();
        self.select(&idx)
    }
}

/// Build the lagged design for every period with complete history.
pub fn build_features(frame: &SeriesFrame, spec: &LagSpec) -> Result<DesignMatrix> {
    spec.validate()?;
    for name in spec.covariate_lags.keys() {
        if frame.covariate(name).is_none() {
            return Err(Error::Schema(format!("lag spec references unknown covariate '{name}'")));
        }
    }
    let target_name = frame.target_name();
    let mut feature_names: Vec<String> = spec
        .target_lags
        .iter()
        .map(|l| format!("{target_name}_lag_{l}"))
        .collect();
    for (name, lags) in &spec.covariate_lags {
        for &l in lags {
            feature_names.push(if l > 0 {
                format!("{name}_lag_{l}")
            } else {
                format!("{name}_lead_{}", -l)
            });
        }
    }

    let n = frame.len();
    let history = spec.history();
    let lookahead = spec.lookahead();
    if n < history + lookahead + 1 {
        return Err(Error::InsufficientHistory(format!(
            "frame of {n} periods cannot supply {history} periods of history and {lookahead} of lookahead"
        )));
    }
    let y = frame.target();
    let mut rows = Vec::with_capacity(n - history - lookahead);
    let mut targets = Vec::with_capacity(rows.capacity());
    let mut target_index = Vec::with_capacity(rows.capacity());
    for t in history..(n - lookahead) {
        let mut r = Vec::with_capacity(feature_names.len());
        r.extend(spec.target_lags.iter().map(|&l| y[t - l]));
        for (name, lags) in &spec.covariate_lags {
            let col = frame.covariate(name).expect("checked above");
            r.extend(lags.iter().map(|&l| col[(t as i64 - l) as usize]));
        }
        rows.push(r);
        targets.push(y[t]);
        target_index.push(t);
    }
    let timestamps = target_index.iter().map(|&t| frame.timestamps()[t]).collect();
    Ok(DesignMatrix {
        rows,
        targets,
        feature_names,
        target_index,
        timestamps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeDelta;

    fn frame(y: Vec<f64>, covs: &[(&str, Vec<f64>)]) -> SeriesFrame {
        let t0 = DateTime::<Utc>::UNIX_EPOCH;
        let ts = (0..y.len()).map(|i| t0 + TimeDelta::hours(i as i64)).collect();
        let c = covs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        SeriesFrame::new(ts, None, "price", y, c).unwrap()
    }

    #[test]
    fn single_lag_rows_equal_previous_target() {
        let y: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let d = build_features(&frame(y.clone(), &[]), &LagSpec::new(vec![1], 1, 1)).unwrap();
        assert_eq!(d.len(), 9);
        for i in 0..9 {
            assert_eq!(d.rows[i], vec![y[i]]);
            assert_eq!(d.targets[i], y[i + 1]);
        }
        assert_eq!(d.feature_names, vec!["price_lag_1"]);
    }

    #[test]
    fn lag_two_on_five_periods_gives_three_rows() {
        let d = build_features(&frame(vec![1.0, 2.0, 3.0, 4.0, 5.0], &[]), &LagSpec::new(vec![2], 1, 1)).unwrap();
        assert_eq!(d.len(), 3);
    }

    #[test]
    fn lag_below_lead_rejected() {
        let err = build_features(&frame(vec![1.0; 10], &[]), &LagSpec::new(vec![1], 1, 2)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        // Multi-period windows need lags covering the whole horizon.
        assert!(LagSpec::new(vec![23], 24, 1).validate().is_err());
        assert!(LagSpec::new(vec![24, 168], 24, 1).validate().is_ok());
    }

    #[test]
    fn too_short_frame() {
        let err = build_features(&frame(vec![1.0; 3], &[]), &LagSpec::new(vec![5], 1, 1)).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory(_)));
    }

    #[test]
    fn covariate_leads_and_lags() {
        let w: Vec<f64> = (0..8).map(|i| 100.0 + i as f64).collect();
        let mut spec = LagSpec::new(vec![1], 1, 1);
        spec.covariate_lags.insert("wind_fc".into(), vec![0, -1, 2]);
        let d = build_features(&frame(vec![0.0; 8], &[("wind_fc", w.clone())]), &spec).unwrap();
        assert_eq!(d.feature_names, vec!["price_lag_1", "wind_fc_lead_0", "wind_fc_lead_1", "wind_fc_lag_2"]);
        assert_eq!(d.len(), 8 - 2 - 1);
        let t = d.target_index[0];
        assert_eq!(d.rows[0][1..], [w[t], w[t + 1], w[t - 2]]);
    }

    #[test]
    fn unknown_covariate_is_schema_error() {
        let mut spec = LagSpec::new(vec![1], 1, 1);
        spec.covariate_lags.insert("load".into(), vec![0]);
        assert!(matches!(build_features(&frame(vec![0.0; 5], &[]), &spec), Err(Error::Schema(_))));
    }
}
