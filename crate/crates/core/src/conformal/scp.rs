use log::debug;

use super::{check_alpha, pair_grid, symmetric_forecast, IntervalRun};
use crate::dataset::DesignMatrix;
use crate::error::{Error, Result};
use crate::learners::{fit_point, LearnerParams, ModelKind, Predictor};
use crate::quantile::{empirical_quantile, QuantileConvention, QuantileGrid};

/// Split conformal margin: conformal quantile of the absolute calibration
/// residuals at level `1 - 2 alpha`.
pub fn scp_lambda(abs_residuals: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    empirical_quantile(abs_residuals, 1.0 - 2.0 * alpha, QuantileConvention::Conformal)
}

/// Calibrate symmetric margins from held-out predictions and apply them to
/// the test predictions.
pub fn scp_from_predictions(
    calib_pred: &[f64],
    calib_y: &[f64],
    test_pred: &[f64],
    grid: &QuantileGrid,
) -> Result<IntervalRun> {
    if calib_pred.len() != calib_y.len() {
        return Err(Error::Shape("calibration predictions and truths differ in length".into()));
    }
    if calib_y.is_empty() {
        return Err(Error::InsufficientHistory("split conformal needs a non-empty calibration set".into()));
    }
    let resid: Vec<f64> = calib_pred.iter().zip(calib_y).map(|(f, y)| (y - f).abs()).collect();
    let mut warnings = Vec::new();
    let (forecast, margins) = symmetric_forecast(test_pred, grid, |a| {
        let need = (1.0 / (2.0 * a) - 1e-9).ceil() as usize;
        if resid.len() < need {
            let msg = format!(
                "calibration set of {} is below {need}; the alpha={a} margin is the largest residual",
                resid.len()
            );
            debug!("{msg}");
            warnings.push(msg);
        }
        scp_lambda(&resid, a)
    })?;
    Ok(IntervalRun {
        centers: test_pred.to_vec(),
        forecast,
        margins,
        warnings,
    })
}

pub fn scp_grid(
    kind: ModelKind,
    train: &DesignMatrix,
    calib: &DesignMatrix,
    test: &DesignMatrix,
    grid: &QuantileGrid,
    params: &LearnerParams,
    seed: u64,
) -> Result<IntervalRun> {
    if calib.is_empty() {
        return Err(Error::InsufficientHistory("split conformal needs a non-empty calibration set".into()));
    }
    let model = fit_point(kind, train, params, seed)?;
    let calib_pred = model.predict(&calib.rows)?;
    let test_pred = model.predict(&test.rows)?;
    scp_from_predictions(&calib_pred, &calib.targets, &test_pred, grid)
}

pub fn scp_run(
    kind: ModelKind,
    train: &DesignMatrix,
    calib: &DesignMatrix,
    test: &DesignMatrix,
    alpha: f64,
    params: &LearnerParams,
    seed: u64,
) -> Result<IntervalRun> {
    scp_grid(kind, train, calib, test, &pair_grid(alpha)?, params, seed)
}
