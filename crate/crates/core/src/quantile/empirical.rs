use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rule for picking an order statistic out of a finite sample.
///
/// * `Higher`: the k-th smallest value with `k = ceil(p * n)`.
/// * `Conformal`: the k-th smallest value with `k = ceil((n + 1) * p)`,
///   clamped to `n`. This is the finite-sample-valid rule used by split
///   conformal calibration.
/// * `Linear`: interpolation between order statistics at position
///   `(n - 1) * p` (zero based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QuantileConvention {
    Higher,
    Linear,
    #[default]
    Conformal,
}

impl std::str::FromStr for QuantileConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "higher" => Ok(Self::Higher),
            "linear" => Ok(Self::Linear),
            "conformal" => Ok(Self::Conformal),
            other => Err(Error::Config(format!("unknown quantile convention '{other}'"))),
        }
    }
}

// ceil() that forgives representation error, e.g. 0.8 * 10 = 8.000000000000002.
fn ceil_tolerant(x: f64) -> usize {
    let c = (x - 1e-9 * x.abs().max(1.0)).ceil();
    if c < 1.0 {
        1
    } else {
        c as usize
    }
}

/// 1-based rank selected by an order-statistic convention.
fn rank(n: usize, p: f64, convention: QuantileConvention) -> usize {
    let k = match convention {
        QuantileConvention::Higher => ceil_tolerant(p * n as f64),
        QuantileConvention::Conformal => ceil_tolerant(p * (n as f64 + 1.0)),
        QuantileConvention::Linear => unreachable!("linear has no single rank"),
    };
    k.clamp(1, n)
}

fn check_level(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("quantile level {p} outside (0, 1]")));
    }
    Ok(())
}

/// Empirical quantile of `values` at level `p` in (0, 1].
pub fn empirical_quantile(values: &[f64], p: f64, convention: QuantileConvention) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Shape("empirical quantile of an empty sample".into()));
    }
    check_level(p)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p, convention))
}

/// Same as [`empirical_quantile`] for an already ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64, convention: QuantileConvention) -> f64 {
    let n = sorted.len();
    match convention {
        QuantileConvention::Linear => {
            let h = (n as f64 - 1.0) * p;
            let lo = h.floor() as usize;
            if lo + 1 >= n {
                sorted[n - 1]
            } else {
                sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
            }
        }
        c => sorted[rank(n, p, c) - 1],
    }
}

/// Quantile of a weighted sample, as used when pooling leaf contents of a
/// quantile regression forest.
///
/// Equal weights reproduce [`empirical_quantile`] exactly. For unequal
/// weights `Higher` takes the smallest value whose cumulative weight reaches
/// `p`; `Conformal` does the same at `p * (n + 1) / n` where `n` is the Kish
/// effective sample size; `Linear` interpolates between values placed at
/// positions `W_{k-1} / (1 - w_last)`.
pub fn weighted_quantile(
    samples: &[(f64, f64)],
    p: f64,
    convention: QuantileConvention,
) -> Result<f64> {
    let mut pts: Vec<(f64, f64)> = samples.iter().copied().filter(|&(_, w)| w > 0.0).collect();
    if pts.is_empty() {
        return Err(Error::Shape("weighted quantile of an empty sample".into()));
    }
    check_level(p)?;
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (wmin, wmax) = pts
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(_, w)| (lo.min(w), hi.max(w)));
    if wmax - wmin <= 1e-12 * wmax {
        let vals: Vec<f64> = pts.iter().map(|&(v, _)| v).collect();
        return Ok(quantile_sorted(&vals, p, convention));
    }

    let total: f64 = pts.iter().map(|&(_, w)| w).sum();
    let norm: Vec<f64> = pts.iter().map(|&(_, w)| w / total).collect();

    match convention {
        QuantileConvention::Linear => {
            let last = *norm.last().unwrap();
            let denom = (1.0 - last).max(f64::MIN_POSITIVE);
            let mut cum = 0.0;
            let mut prev: Option<(f64, f64)> = None;
            for (i, &(v, _)) in pts.iter().enumerate() {
                let pos = (cum / denom).min(1.0);
                if pos >= p {
                    return Ok(match prev {
                        Some((ppos, pv)) if pos > ppos => pv + (p - ppos) / (pos - ppos) * (v - pv),
                        _ => v,
                    });
                }
                prev = Some((pos, v));
                cum += norm[i];
            }
            Ok(pts.last().unwrap().0)
        }
        c => {
            let target = if c == QuantileConvention::Conformal {
                let n_eff = 1.0 / norm.iter().map(|w| w * w).sum::<f64>();
                (p * (n_eff + 1.0) / n_eff).min(1.0)
            } else {
                p
            };
            let mut cum = 0.0;
            for (i, &(v, _)) in pts.iter().enumerate() {
                cum += norm[i];
                if cum >= target - 1e-10 {
                    return Ok(v);
                }
            }
            Ok(pts.last().unwrap().0)
        }
    }
}
