//! LASSO-estimated autoregression by cyclic coordinate descent.
//!
//! Features are standardised internally and the objective is
//! `(1 / 2n) |y - ybar - Z beta|^2 + lambda |beta|_1` in standardised units.
//! Reported coefficients are mapped back to the original feature scale.

use serde::{Deserialize, Serialize};

use super::knn::standardizer;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub lambda: f64,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Coefficients in standardised units (zero for constant features).
    pub standardized: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
    constant: Vec<bool>,
    pub sweeps: usize,
}

fn columns(rows: &[Vec<f64>], means: &[f64], scales: &[f64]) -> Vec<Vec<f64>> {
    (0..means.len())
        .map(|j| rows.iter().map(|r| (r[j] - means[j]) / scales[j]).collect())
        .collect()
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max(rows: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let (means, scales) = standardizer(rows);
    let ybar = y.iter().sum::<f64>() / n;
    columns(rows, &means, &scales)
        .iter()
        .map(|z| (z.iter().zip(y).map(|(a, b)| a * (b - ybar)).sum::<f64>() / n).abs())
        .fold(0.0, f64::max)
}

impl LassoModel {
    pub fn fit(rows: &[Vec<f64>], y: &[f64], lambda: f64, tol: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lasso penalty must be finite and >= 0, got {lambda}")));
        }
        let n = y.len();
        if n == 0 || rows.len() != n {
            return Err(Error::Shape("lasso needs aligned non-empty data".into()));
        }
        let nf = n as f64;
        let (means, scales) = standardizer(rows);
        let width = means.len();
        let constant: Vec<bool> = (0..width)
            .map(|j| {
                let m = means[j];
                rows.iter().all(|r| (r[j] - m).abs() <= 1e-12 * (1.0 + m.abs()))
            })
            .collect();
        let z = columns(rows, &means, &scales);
        let ybar = y.iter().sum::<f64>() / nf;
        let mut resid: Vec<f64> = y.iter().map(|v| v - ybar).collect();
        let mut beta = vec![0.0; width];
        // diag of Z'Z / n; 1 for standardised columns up to rounding
        let norms: Vec<f64> = z.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();

        let mut sweeps = 0;
        while sweeps < MAX_SWEEPS {
            sweeps += 1;
            let mut max_delta = 0.0f64;
            let mut max_beta = 0.0f64;
            for j in 0..width {
                if constant[j] {
                    continue;
                }
                let col = &z[j];
                let rho = col.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / nf + norms[j] * beta[j];
                let new = soft_threshold(rho, lambda) / norms[j];
                let delta = new - beta[j];
                if delta != 0.0 {
                    resid.iter_mut().zip(col).for_each(|(r, c)| *r -= c * delta);
                    beta[j] = new;
                }
                max_delta = max_delta.max(delta.abs());
                max_beta = max_beta.max(new.abs());
            }
            if max_delta <= tol * (1.0 + max_beta) {
                break;
            }
        }

        let mut coefficients = vec![0.0; width];
        let mut intercept = ybar;
        for j in 0..width {
            coefficients[j] = beta[j] / scales[j];
            intercept -= coefficients[j] * means[j];
        }
        Ok(Self {
            lambda,
            coefficients,
            intercept,
            standardized: beta,
            means,
            scales,
            constant,
            sweeps,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `(1/n) z_j' (y - yhat)` per feature in standardised units; at a lasso
    /// optimum this equals `lambda * sign(beta_j)` where `beta_j != 0` and is
    /// bounded by `lambda` elsewhere.
    pub fn kkt_gradients(&self, rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let nf = y.len() as f64;
        let resid: Vec<f64> = rows.iter().zip(y).map(|(r, &t)| t - self.predict_row(r)).collect();
        let z = columns(rows, &self.means, &self.scales);
        z.iter()
            .zip(&self.constant)
            .map(|(c, &k)| if k { 0.0 } else { c.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / nf })
            .collect()
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Choose the penalty on a time-ordered holdout (last fifth of the rows) from
/// `{1e-4, 1e-3, 1e-2, 1e-1} * lambda_max`, then refit on everything.
pub fn fit_with_validation(rows: &[Vec<f64>], y: &[f64], tol: f64) -> Result<LassoModel> {
    let n = y.len();
    let lmax = lambda_max(rows, y);
    let grid: Vec<f64> = [1e-4, 1e-3, 1e-2, 1e-1].iter().map(|f| f * lmax).collect();
    let cut = n - n / 5;
    if n < 10 || cut == n {
        return LassoModel::fit(rows, y, grid[0], tol);
    }
    let mut best = (f64::INFINITY, grid[0]);
    for &lam in &grid {
        let m = LassoModel::fit(&rows[..cut], &y[..cut], lam, tol)?;
        let mse = rows[cut..]
            .iter()
            .zip(&y[cut..])
            .map(|(r, &t)| (t - m.predict_row(r)).powi(2))
            .sum::<f64>()
            / (n - cut) as f64;
        if mse < best.0 {
            best = (mse, lam);
        }
    }
    LassoModel::fit(rows, y, best.1, tol)
}
