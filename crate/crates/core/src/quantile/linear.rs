//! Linear quantile regression.
//!
//! Minimises `sum_t rho_alpha(y_t - x_t' beta - b)` exactly. The check-loss
//! objective is polyhedral, so an optimum sits on a vertex where as many
//! observations as free parameters are interpolated. The solver
//!
//! 1. standardises the design and drops constant or collinear columns,
//! 2. warm starts with a few rounds of iteratively reweighted least squares,
//! 3. picks the best-fitting independent observations as the starting vertex,
//! 4. walks vertex to vertex along edges with negative directional
//!    derivative, doing an exact line search over the residual breakpoints.
//!
//! The walk stops when no edge descends (relative tolerance `1e-10` on the
//! directional derivative) or after `20 n + 200` pivots.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::DesignMatrix;
use crate::error::{Error, Result};
use crate::quantile::empirical::{empirical_quantile, QuantileConvention};
use crate::quantile::pinball;

/// Check function `rho_alpha(u)`.
#[inline]
pub fn check_loss(u: f64, alpha: f64) -> f64 {
    if u >= 0.0 {
        alpha * u
    } else {
        (alpha - 1.0) * u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQuantileModel {
    pub alpha: f64,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub warnings: Vec<String>,
    pub pivots: usize,
}

impl LinearQuantileModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|r| {
                if r.len() != self.coefficients.len() {
                    Err(Error::Shape(format!(
                        "row has {} features, model expects {}",
                        r.len(),
                        self.coefficients.len()
                    )))
                } else {
                    Ok(self.predict_row(r))
                }
            })
            .collect()
    }

    /// Total check loss on a sample.
    pub fn objective(&self, rows: &[Vec<f64>], y: &[f64]) -> f64 {
        rows.iter()
            .zip(y)
            .map(|(r, &t)| pinball(self.predict_row(r), t, self.alpha))
            .sum()
    }
}

pub fn fit_linear_qr(data: &DesignMatrix, alpha: f64) -> Result<LinearQuantileModel> {
    fit_linear_qr_rows(&data.rows, &data.targets, alpha)
}

pub fn fit_linear_qr_rows(rows: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<LinearQuantileModel> {
    let n = y.len();
    if n == 0 || rows.len() != n {
        return Err(Error::Shape(format!(
            "quantile regression needs aligned non-empty data ({} rows, {} targets)",
            rows.len(),
            n
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("quantile level {alpha} outside (0, 1)")));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::Shape("ragged design rows".into()));
    }
    if y.iter().any(|v| !v.is_finite()) || rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Shape("non-finite value in quantile regression input".into()));
    }

    let mut warnings = Vec::new();

    // Standardise and keep an independent subset of columns.
    let mut means = vec![0.0; p];
    let mut scales = vec![1.0; p];
    let mut kept: Vec<usize> = Vec::new();
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    let mut constant = 0usize;
    let mut collinear = 0usize;
    for j in 0..p {
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n as f64;
        let s = var.sqrt();
        if !(s > 1e-12 * (1.0 + m.abs())) {
            constant += 1;
            continue;
        }
        means[j] = m;
        scales[j] = s;
        let mut v: Vec<f64> = rows.iter().map(|r| (r[j] - m) / s).collect();
        for q in &ortho {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm2: f64 = v.iter().map(|a| a * a).sum();
        if norm2 <= 1e-10 * n as f64 {
            collinear += 1;
            continue;
        }
        let norm = norm2.sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        ortho.push(v);
        kept.push(j);
    }
    if p > 0 && kept.is_empty() {
        warnings.push("degenerate design: all features constant, fitted intercept only".to_string());
    } else {
        if constant > 0 {
            warnings.push(format!("{constant} constant feature(s) given zero coefficient"));
        }
        if collinear > 0 {
            warnings.push(format!("{collinear} collinear feature(s) given zero coefficient"));
        }
    }
    for w in &warnings {
        debug!("quantile regression at {alpha}: {w}");
    }

    let k = kept.len() + 1;
    let mut z = Vec::with_capacity(n * k);
    for r in rows {
        z.push(1.0);
        for &j in &kept {
            z.push((r[j] - means[j]) / scales[j]);
        }
    }

    let start = warm_start(&z, k, y, alpha);
    let basis = pick_basis(&z, k, y, &start);
    let (theta, pivots, capped) = descend(&z, k, y, alpha, basis);
    if capped {
        let msg = format!("pivot limit reached after {pivots} pivots");
        debug!("quantile regression at {alpha}: {msg}");
        warnings.push(msg);
    }

    let mut coefficients = vec![0.0; p];
    let mut intercept = theta[0];
    for (slot, &j) in kept.iter().enumerate() {
        let c = theta[slot + 1] / scales[j];
        coefficients[j] = c;
        intercept -= c * means[j];
    }

    let mut model = LinearQuantileModel {
        alpha,
        coefficients,
        intercept,
        warnings,
        pivots,
    };

    // Never worse than the best constant.
    let q = empirical_quantile(y, alpha, QuantileConvention::Higher)?;
    let constant_obj: f64 = y.iter().map(|&t| pinball(q, t, alpha)).sum();
    if constant_obj < model.objective(rows, y) {
        model.coefficients = vec![0.0; p];
        model.intercept = q;
    }
    Ok(model)
}

fn row(z: &[f64], k: usize, i: usize) -> &[f64] {
    &z[i * k..(i + 1) * k]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn weighted_ls(z: &[f64], k: usize, y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for (i, (&yi, &wi)) in y.iter().zip(w).enumerate() {
        let zi = row(z, k, i);
        for r in 0..k {
            b[r] += wi * zi[r] * yi;
            for c in r..k {
                a[(r, c)] += wi * zi[r] * zi[c];
            }
        }
    }
    let trace: f64 = (0..k).map(|r| a[(r, r)]).sum::<f64>() / k as f64;
    for r in 0..k {
        for c in 0..r {
            a[(r, c)] = a[(c, r)];
        }
        a[(r, r)] += 1e-12 * trace.max(1e-300);
    }
    a.lu().solve(&b).map(|v| v.iter().copied().collect())
}

fn warm_start(z: &[f64], k: usize, y: &[f64], alpha: f64) -> Vec<f64> {
    let n = y.len();
    let mut theta = weighted_ls(z, k, y, &vec![1.0; n]).unwrap_or_else(|| {
        let mut t = vec![0.0; k];
        t[0] = y.iter().sum::<f64>() / n as f64;
        t
    });
    let spread = y.iter().map(|v| (v - theta[0]).abs()).sum::<f64>() / n as f64;
    let eps = 1e-4 * spread.max(1e-12);
    let mut w = vec![0.0; n];
    for _ in 0..25 {
        for i in 0..n {
            let r = y[i] - dot(row(z, k, i), &theta);
            let side = if r >= 0.0 { alpha } else { 1.0 - alpha };
            w[i] = side / r.abs().max(eps);
        }
        match weighted_ls(z, k, y, &w) {
            Some(t) => theta = t,
            None => break,
        }
    }
    theta
}

/// Observations with the smallest warm-start residuals whose rows are
/// linearly independent.
fn pick_basis(z: &[f64], k: usize, y: &[f64], theta: &[f64]) -> Vec<usize> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let resid: Vec<f64> = (0..n).map(|i| (y[i] - dot(row(z, k, i), theta)).abs()).collect();
    order.sort_by(|&a, &b| resid[a].total_cmp(&resid[b]).then(a.cmp(&b)));

    let mut basis = Vec::with_capacity(k);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(k);
    for &i in &order {
        let mut v = row(z, k, i).to_vec();
        let norm0 = dot(&v, &v).sqrt();
        for q in &ortho {
            let d = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 * norm0.max(1e-300) {
            v.iter_mut().for_each(|a| *a /= norm);
            ortho.push(v);
            basis.push(i);
            if basis.len() == k {
                break;
            }
        }
    }
    basis
}

fn solve_basis(z: &[f64], k: usize, y: &[f64], basis: &[usize]) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let b = DMatrix::from_fn(k, k, |r, c| z[basis[r] * k + c]);
    let rhs = DVector::from_fn(k, |r, _| y[basis[r]]);
    let lu = b.lu();
    let theta = lu.solve(&rhs)?;
    let inv = lu.try_inverse()?;
    Some((theta.iter().copied().collect(), inv))
}

/// Vertex descent. Returns (parameters, pivots, hit_limit).
fn descend(z: &[f64], k: usize, y: &[f64], alpha: f64, mut basis: Vec<usize>) -> (Vec<f64>, usize, bool) {
    let n = y.len();
    let max_pivots = 20 * n + 200;
    let yscale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ztol = 1e-11 * (1.0 + yscale);

    let mut in_basis = vec![false; n];
    for &i in &basis {
        in_basis[i] = true;
    }
    let mut a = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let mut last_theta: Option<Vec<f64>> = None;

    for pivots in 0..=max_pivots {
        let Some((theta, inv)) = solve_basis(z, k, y, &basis) else {
            // Singular vertex: fall back to whatever we had.
            let t = last_theta.unwrap_or_else(|| {
                let mut t = vec![0.0; k];
                t[0] = empirical_quantile(y, alpha, QuantileConvention::Higher).unwrap_or(0.0);
                t
            });
            return (t, pivots, false);
        };
        for i in 0..n {
            resid[i] = if in_basis[i] { 0.0 } else { y[i] - dot(row(z, k, i), &theta) };
        }
        let is_zero = |i: usize, r: &[f64]| in_basis[i] || r[i].abs() <= ztol;

        // Best descending edge among +-inv[:, j].
        let mut best: Option<(usize, f64, f64)> = None; // (j, sign, slope)
        for j in 0..k {
            let d: Vec<f64> = inv.column(j).iter().copied().collect();
            let mut lin = 0.0;
            let mut zero_plus = 0.0;
            let mut zero_minus = 0.0;
            let mut scale = 0.0;
            for i in 0..n {
                let ai = if in_basis[i] {
                    if basis[j] == i {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    dot(row(z, k, i), &d)
                };
                scale += ai.abs();
                if is_zero(i, &resid) {
                    zero_plus += (alpha * -ai).max((alpha - 1.0) * -ai);
                    zero_minus += (alpha * ai).max((alpha - 1.0) * ai);
                } else if resid[i] > 0.0 {
                    lin -= alpha * ai;
                } else {
                    lin += (1.0 - alpha) * ai;
                }
            }
            let tol = 1e-10 * scale.max(1e-300);
            for (sign, slope) in [(1.0, lin + zero_plus), (-1.0, -lin + zero_minus)] {
                if slope < -tol && best.is_none_or(|(_, _, s)| slope < s) {
                    best = Some((j, sign, slope));
                }
            }
        }
        let Some((j, sign, slope)) = best else {
            return (theta, pivots, false);
        };
        if pivots == max_pivots {
            return (theta, pivots, true);
        }

        // Exact line search along sign * inv[:, j].
        let d: Vec<f64> = inv.column(j).iter().map(|v| v * sign).collect();
        let mut breaks: Vec<(f64, usize)> = Vec::new();
        for i in 0..n {
            if is_zero(i, &resid) {
                continue;
            }
            a[i] = dot(row(z, k, i), &d);
            if a[i] != 0.0 {
                let t = resid[i] / a[i];
                if t > 0.0 {
                    breaks.push((t, i));
                }
            }
        }
        breaks.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut running = slope;
        let mut entering = None;
        for &(_, i) in &breaks {
            running += a[i].abs();
            if running >= -1e-12 * a[i].abs().max(1.0) {
                entering = Some(i);
                break;
            }
        }
        let Some(enter) = entering.or_else(|| breaks.last().map(|b| b.1)) else {
            return (theta, pivots, false);
        };
        in_basis[basis[j]] = false;
        basis[j] = enter;
        in_basis[enter] = true;
        last_theta = Some(theta);
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_intercept(y: &[f64], alpha: f64) -> f64 {
        y.iter()
            .map(|&c| y.iter().map(|&t| check_loss(t - c, alpha)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn intercept_only_median_of_one_to_ten() {
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        let rows = vec![Vec::new(); 10];
        let m = fit_linear_qr_rows(&rows, &y, 0.5).unwrap();
        assert!((5.0..=6.0).contains(&m.intercept), "{}", m.intercept);
        assert!((m.objective(&rows, &y) - brute_intercept(&y, 0.5)).abs() < 1e-9);
    }

    #[test]
    fn intercept_only_upper_decile() {
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        let rows = vec![Vec::new(); 10];
        let m = fit_linear_qr_rows(&rows, &y, 0.9).unwrap();
        assert!((9.0..=10.0).contains(&m.intercept));
        assert!((m.objective(&rows, &y) - brute_intercept(&y, 0.9)).abs() < 1e-9);
    }

    #[test]
    fn exact_line_recovered_at_any_level() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.37 - 3.0).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let y: Vec<f64> = xs.iter().map(|&x| 3.0 + 2.0 * x).collect();
        for alpha in [0.1, 0.5, 0.9] {
            let m = fit_linear_qr_rows(&rows, &y, alpha).unwrap();
            assert!((m.coefficients[0] - 2.0).abs() < 1e-9);
            assert!((m.intercept - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_rows_fall_back_to_intercept_with_warning() {
        let rows = vec![vec![0.0, 0.0]; 7];
        let y = [4.0, 1.0, 7.0, 3.0, 9.0, 2.0, 5.0];
        let m = fit_linear_qr_rows(&rows, &y, 0.5).unwrap();
        assert_eq!(m.coefficients, vec![0.0, 0.0]);
        assert_eq!(m.intercept, 4.0);
        assert!(!m.warnings.is_empty());
    }

    #[test]
    fn collinear_columns_are_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                vec![x, 2.0 * x + 1.0]
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] + rng.random_range(-0.1..0.1)).collect();
        let m = fit_linear_qr_rows(&rows, &y, 0.5).unwrap();
        assert!(m.warnings.iter().any(|w| w.contains("collinear")));
        let fitted: Vec<f64> = rows.iter().map(|r| m.predict_row(r)).collect();
        assert!(fitted.iter().zip(&rows).all(|(f, r)| (f - r[0]).abs() < 0.2));
    }

    /// Against a tiny LP brute force: the optimum interpolates K points, so
    /// enumerating all pairs of observations finds it for one regressor.
    #[test]
    fn matches_pairwise_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let n = 8 + case;
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
            let y: Vec<f64> = rows
                .iter()
                .map(|r| 1.0 - 0.5 * r[0] + rng.random_range(-1.0..1.0f64).powi(3) * 2.0)
                .collect();
            for alpha in [0.1, 0.3, 0.5, 0.8] {
                let mut best = f64::INFINITY;
                for i in 0..n {
                    for j in (i + 1)..n {
                        let dx = rows[j][0] - rows[i][0];
                        if dx.abs() < 1e-12 {
                            continue;
                        }
                        let slope = (y[j] - y[i]) / dx;
                        let icpt = y[i] - slope * rows[i][0];
                        let obj: f64 =
                            rows.iter().zip(&y).map(|(r, &t)| check_loss(t - icpt - slope * r[0], alpha)).sum();
                        best = best.min(obj);
                    }
                }
                let m = fit_linear_qr_rows(&rows, &y, alpha).unwrap();
                let got = m.objective(&rows, &y);
                assert!((got - best).abs() <= 1e-9 * (1.0 + best), "case {case} alpha {alpha}: {got} vs {best}");
            }
        }
    }

    #[test]
    fn median_regression_recovers_slope_on_symmetric_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 2000;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(0.0..10.0), rng.random_range(-5.0..5.0)])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 2.0 + 1.5 * r[0] - 0.7 * r[1] + rng.random_range(-1.0..1.0))
            .collect();
        let m = fit_linear_qr_rows(&rows, &y, 0.5).unwrap();
        assert!((m.coefficients[0] - 1.5).abs() < 0.03, "{:?}", m.coefficients);
        assert!((m.coefficients[1] + 0.7).abs() < 0.03, "{:?}", m.coefficients);
        assert!((m.intercept - 2.0).abs() < 0.15, "{}", m.intercept);
    }

    #[test]
    fn never_worse_than_constant_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random(), rng.random(), rng.random()]).collect();
            let y: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
            for alpha in [0.1, 0.5, 0.9] {
                let m = fit_linear_qr_rows(&rows, &y, alpha).unwrap();
                let q = empirical_quantile(&y, alpha, QuantileConvention::Higher).unwrap();
                let base: f64 = y.iter().map(|&t| check_loss(t - q, alpha)).sum();
                assert!(m.objective(&rows, &y) <= base + 1e-9);
            }
        }
    }
}
