use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pair_grid, symmetric_forecast, IntervalRun};
use crate::dataset::DesignMatrix;
use crate::error::{Error, Result};
use crate::learners::{fit_point, LearnerParams, ModelKind, Predictor};
use crate::quantile::{empirical_quantile, QuantileConvention, QuantileGrid};

/// How member residuals become a margin.
///
/// `MeanMargin` (config name `paper`): each member's residuals over all training rows give a margin,
/// and the margins are averaged. `Oob`: each training row is scored by the
/// mean of the members whose bootstrap left it out, and one margin is taken
/// from those residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnbpiAgg {
    #[default]
    #[serde(rename = "paper")]
    MeanMargin,
    Oob,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnbpiOptions {
    pub b: usize,
    pub agg: EnbpiAgg,
    /// Every member trains on the unresampled training set (testing hook).
    pub identity_bootstrap: bool,
}

impl EnbpiOptions {
    pub fn new(b: usize, agg: EnbpiAgg) -> Self {
        Self {
            b,
            agg,
            identity_bootstrap: false,
        }
    }
}

/// Uniform draw with replacement of `n` row indices for member `b`.
pub(crate) fn bootstrap_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64));
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn mean_columns(preds: &[Vec<f64>]) -> Vec<f64> {
    let len = preds[0].len();
    let b = preds.len() as f64;
    (0..len)
        .map(|t| preds.iter().map(|p| p[t]).sum::<f64>() / b)
        .collect()
}

/// EnbPI aggregation over already fitted members. `in_bag[b]` lists the
/// training rows member `b` was fitted on (with repetition).
pub fn enbpi_with_members<P: Predictor>(
    members: &[P],
    in_bag: &[Vec<usize>],
    train: &DesignMatrix,
    test: &DesignMatrix,
    grid: &QuantileGrid,
    agg: EnbpiAgg,
) -> Result<IntervalRun> {
    if members.is_empty() {
        return Err(Error::Config("EnbPI needs B >= 1 members".into()));
    }
    if in_bag.len() != members.len() {
        return Err(Error::Shape("one bootstrap sample per member required".into()));
    }
    if train.is_empty() {
        return Err(Error::InsufficientHistory("EnbPI needs training rows for residuals".into()));
    }
    let train_preds: Vec<Vec<f64>> = members.iter().map(|m| m.predict(&train.rows)).collect::<Result<_>>()?;
    let test_preds: Vec<Vec<f64>> = members.iter().map(|m| m.predict(&test.rows)).collect::<Result<_>>()?;
    let centers = if test.is_empty() { Vec::new() } else { mean_columns(&test_preds) };

    let mut warnings = Vec::new();
    let mut agg = agg;
    let mut oob_resid = Vec::new();
    if agg == EnbpiAgg::Oob {
        let n = train.len();
        for i in 0..n {
            let mut sum = 0.0;
            let mut cnt = 0usize;
            for (b, bag) in in_bag.iter().enumerate() {
                if !bag.contains(&i) {
                    sum += train_preds[b][i];
                    cnt += 1;
                }
            }
            if cnt > 0 {
                oob_resid.push((train.targets[i] - sum / cnt as f64).abs());
            }
        }
        if oob_resid.is_empty() {
            let msg = "no training row is out of bag for any member; averaging per-member margins instead".to_string();
            debug!("{msg}");
            warnings.push(msg);
            agg = EnbpiAgg::MeanMargin;
        }
    }

    let member_resid: Vec<Vec<f64>> = train_preds
        .iter()
        .map(|p| p.iter().zip(&train.targets).map(|(f, y)| (y - f).abs()).collect())
        .collect();
    let (forecast, margins) = symmetric_forecast(&centers, grid, |a| {
        let level = 1.0 - 2.0 * a;
        match agg {
            EnbpiAgg::MeanMargin => {
                let mut total = 0.0;
                for r in &member_resid {
                    total += empirical_quantile(r, level, QuantileConvention::Conformal)?;
                }
                Ok(total / member_resid.len() as f64)
            }
            EnbpiAgg::Oob => empirical_quantile(&oob_resid, level, QuantileConvention::Conformal),
        }
    })?;
    Ok(IntervalRun {
        centers,
        forecast,
        margins,
        warnings,
    })
}

pub fn enbpi_grid(
    kind: ModelKind,
    train: &DesignMatrix,
    test: &DesignMatrix,
    grid: &QuantileGrid,
    opts: &EnbpiOptions,
    params: &LearnerParams,
    seed: u64,
) -> Result<IntervalRun> {
    if opts.b == 0 {
        return Err(Error::Config("EnbPI needs B >= 1".into()));
    }
    let n = train.len();
    let bags: Vec<Vec<usize>> = (0..opts.b)
        .map(|b| {
            if opts.identity_bootstrap {
                (0..n).collect()
            } else {
                bootstrap_indices(n, seed, b)
            }
        })
        .collect();
    let members = bags
        .par_iter()
        .enumerate()
        .map(|(b, bag)| fit_point(kind, &train.select(bag), params, seed.wrapping_add(b as u64)))
        .collect::<Result<Vec<_>>>()?;
    enbpi_with_members(&members, &bags, train, test, grid, opts.agg)
}

#[allow(clippy::too_many_arguments)]
pub fn enbpi_run(
    kind: ModelKind,
    train: &DesignMatrix,
    test: &DesignMatrix,
    b: usize,
    alpha: f64,
    params: &LearnerParams,
    seed: u64,
    agg: EnbpiAgg,
) -> Result<IntervalRun> {
    enbpi_grid(kind, train, test, &pair_grid(alpha)?, &EnbpiOptions::new(b, agg), params, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant(f64);

    impl Predictor for Constant {
        fn width(&self) -> usize {
            1
        }
        fn predict_row(&self, _: &[f64]) -> f64 {
            self.0
        }
    }

    fn design(n: usize) -> DesignMatrix {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let y = rows.iter().map(|r| 2.0 - 0.5 * r[0]).collect();
        DesignMatrix::from_rows(rows, y).unwrap()
    }

    #[test]
    fn stub_members_average() {
        let d = design(10);
        let members = [Constant(1.0), Constant(2.0), Constant(3.0)];
        let bags = vec![vec![0; 10]; 3];
        let run = enbpi_with_members(&members, &bags, &d, &d.slice(0..1), &pair_grid(0.1).unwrap(), EnbpiAgg::MeanMargin).unwrap();
        assert_eq!(run.centers, vec![2.0]);
    }

    #[test]
    fn margin_is_mean_of_member_margins() {
        // constant residual magnitudes 2, 4, 6 per member
        let d = DesignMatrix::from_rows(vec![vec![0.0]; 5], vec![0.0; 5]).unwrap();
        let members = [Constant(2.0), Constant(-4.0), Constant(6.0)];
        let bags = vec![vec![0; 5]; 3];
        let run = enbpi_with_members(&members, &bags, &d, &d, &pair_grid(0.1).unwrap(), EnbpiAgg::MeanMargin).unwrap();
        assert_eq!(run.margins, vec![(0.1, 4.0)]);
    }

    #[test]
    fn perfect_identity_ensemble_has_zero_width() {
        let d = design(30);
        let mut p = LearnerParams::default();
        p.lear.lambda = Some(0.0);
        let opts = EnbpiOptions { b: 1, agg: EnbpiAgg::MeanMargin, identity_bootstrap: true };
        let run = enbpi_grid(ModelKind::Lear, &d, &d, &pair_grid(0.1).unwrap(), &opts, &p, 3).unwrap();
        for (i, iv) in run.intervals(0.1).unwrap().iter().enumerate() {
            assert!(iv.width().abs() < 1e-9);
            assert!((run.centers[i] - d.targets[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn oob_without_holdouts_falls_back() {
        let d = design(8);
        let members = [Constant(1.0)];
        let bags = vec![(0..8).collect()];
        let run = enbpi_with_members(&members, &bags, &d, &d, &pair_grid(0.2).unwrap(), EnbpiAgg::Oob).unwrap();
        assert_eq!(run.warnings.len(), 1);
    }

    #[test]
    fn deterministic_and_constant_width() {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 * 0.37).sin(), i as f64 % 7.0]).collect();
        let y: Vec<f64> = rows.iter().enumerate().map(|(i, r)| r[0] * 4.0 + r[1] + ((i * 13) % 5) as f64).collect();
        let d = DesignMatrix::from_rows(rows, y).unwrap();
        let (tr, te) = (d.slice(0..45), d.slice(45..60));
        for agg in [EnbpiAgg::MeanMargin, EnbpiAgg::Oob] {
            let a = enbpi_run(ModelKind::Lear, &tr, &te, 5, 0.1, &LearnerParams::default(), 11, agg).unwrap();
            let b = enbpi_run(ModelKind::Lear, &tr, &te, 5, 0.1, &LearnerParams::default(), 11, agg).unwrap();
            assert_eq!(a, b);
            let iv = a.intervals(0.1).unwrap();
            assert!(iv.iter().all(|i| (i.width() - iv[0].width()).abs() < 1e-9));
        }
    }
}
