use serde::{Deserialize, Serialize};

use super::{pair_grid, IntervalRun, ResidualBuffer};
use crate::dataset::DesignMatrix;
use crate::error::{Error, Result};
use crate::learners::{fit_point, LearnerParams, ModelKind, Predictor, QrfModel, QrfParams};
use crate::quantile::{rearrange, QuantileConvention, QuantileForecast, QuantileGrid};

/// `Signed`: quantiles of the signed residual are added to the center.
/// `Symmetric`: a margin from the quantile of absolute residuals is applied on
/// both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpciMode {
    #[default]
    Signed,
    Symmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpciOptions {
    pub window: usize,
    pub resid_lags: usize,
    pub qrf: QrfParams,
    pub mode: SpciMode,
    /// Feed each realised residual back into the buffer before the next step.
    /// When false the whole test block is forecast from the initial buffer.
    pub online: bool,
    /// Refit the residual forest every this many steps (online mode).
    pub refit_every: usize,
    /// Age of the most recent residual feature. A batch forecast of `h`
    /// steps needs `gap >= h` so every step only sees known residuals.
    pub gap: usize,
}

impl Default for SpciOptions {
    fn default() -> Self {
        Self {
            window: 200,
            resid_lags: 8,
            qrf: QrfParams::default(),
            mode: SpciMode::Signed,
            online: true,
            refit_every: 1,
            gap: 1,
        }
    }
}

fn fit_residual_forest(buffer: &ResidualBuffer, opts: &SpciOptions, seed: u64) -> Result<QrfModel> {
    let (rows, y) = buffer.lagged_with_gap(opts.resid_lags, opts.gap, opts.mode == SpciMode::Symmetric);
    let mut params = opts.qrf.clone();
    params.min_leaf = params.min_leaf.min(y.len()).max(1);
    QrfModel::fit(&rows, &y, &params, seed)
}

/// SPCI on precomputed residuals: `train_resid` seeds the buffer, `centers`
/// are the base predictions for the test block and `truths` (required in
/// online mode) are revealed one step at a time.
pub fn spci_from_residuals(
    train_resid: &[f64],
    centers: &[f64],
    truths: Option<&[f64]>,
    grid: &QuantileGrid,
    opts: &SpciOptions,
    seed: u64,
) -> Result<IntervalRun> {
    if opts.refit_every == 0 || opts.gap == 0 {
        return Err(Error::Config("SPCI refit_every and gap must be >= 1".into()));
    }
    if opts.resid_lags == 0 || opts.window < opts.resid_lags + opts.gap {
        return Err(Error::Config(format!(
            "SPCI needs window ({}) >= resid_lags ({}) + gap ({}) and resid_lags >= 1",
            opts.window, opts.resid_lags, opts.gap
        )));
    }
    if !opts.online && centers.len() > opts.gap {
        return Err(Error::Config(format!(
            "batch SPCI over {} steps needs gap >= {0}, got {}",
            centers.len(),
            opts.gap
        )));
    }
    if opts.online {
        match truths {
            Some(y) if y.len() == centers.len() => {}
            _ => return Err(Error::Shape("online SPCI needs one truth per test step".into())),
        }
    }
    let mut buffer = ResidualBuffer::seeded(opts.window, train_resid)?;
    let need = opts.resid_lags + opts.gap;
    if buffer.len() < need {
        return Err(Error::InsufficientHistory(format!(
            "SPCI buffer holds {} residuals, needs at least {need}",
            buffer.len(),
        )));
    }
    let conv = QuantileConvention::Conformal;
    let levels = grid.levels();
    let mut model: Option<QrfModel> = None;
    let mut values = Vec::with_capacity(centers.len());
    for (t, &c) in centers.iter().enumerate() {
        let refit = model.is_none() || (opts.online && t % opts.refit_every == 0);
        if refit {
            model = Some(fit_residual_forest(&buffer, opts, seed.wrapping_add(t as u64))?);
        }
        let m = model.as_ref().expect("fitted above");
        let ahead = if opts.online { 0 } else { t };
        let x = buffer.features_ahead(opts.resid_lags, opts.gap, ahead);
        let step = match opts.mode {
            SpciMode::Signed => m.quantiles(&x, levels, conv)?.iter().map(|q| c + q).collect(),
            SpciMode::Symmetric => levels
                .iter()
                .map(|&p| {
                    let a = p.min(1.0 - p);
                    if (0.5 - a).abs() < 1e-12 {
                        return Ok(c);
                    }
                    let lam = m.quantile(&x, 1.0 - 2.0 * a, conv)?;
                    Ok(if p < 0.5 { c - lam } else { c + lam })
                })
                .collect::<Result<Vec<f64>>>()?,
        };
        values.push(step);
        if opts.online {
            let y = truths.expect("checked above")[t];
            buffer.push(y - c);
        }
    }
    let forecast = rearrange(&QuantileForecast::new(grid.clone(), values)?);
    Ok(IntervalRun {
        centers: centers.to_vec(),
        forecast,
        margins: Vec::new(),
        warnings: Vec::new(),
    })
}

pub fn spci_grid(
    kind: ModelKind,
    train: &DesignMatrix,
    test: &DesignMatrix,
    grid: &QuantileGrid,
    opts: &SpciOptions,
    params: &LearnerParams,
    seed: u64,
) -> Result<IntervalRun> {
    let model = fit_point(kind, train, params, seed)?;
    let fitted = model.predict(&train.rows)?;
    let resid: Vec<f64> = train.targets.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let centers = model.predict(&test.rows)?;
    spci_from_residuals(&resid, &centers, Some(&test.targets), grid, opts, seed)
}

pub fn spci_run(
    kind: ModelKind,
    train: &DesignMatrix,
    test: &DesignMatrix,
    alpha: f64,
    opts: &SpciOptions,
    params: &LearnerParams,
    seed: u64,
) -> Result<IntervalRun> {
    spci_grid(kind, train, test, &pair_grid(alpha)?, opts, params, seed)
}
