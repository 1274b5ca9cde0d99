use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// k nearest neighbours on standardised features. Distance ties go to the
/// smaller training index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    k: usize,
    means: Vec<f64>,
    scales: Vec<f64>,
    train: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

pub(crate) fn standardizer(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let width = rows.first().map_or(0, Vec::len);
    let mut means = vec![0.0; width];
    let mut scales = vec![1.0; width];
    for j in 0..width {
        let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let v = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
        means[j] = m;
        if v.sqrt() > 1e-12 * (1.0 + m.abs()) {
            scales[j] = v.sqrt();
        }
    }
    (means, scales)
}

impl KnnModel {
    pub fn fit(rows: &[Vec<f64>], targets: &[f64], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("knn needs k >= 1".into()));
        }
        if k > rows.len() {
            return Err(Error::Config(format!("knn k = {k} exceeds {} training rows", rows.len())));
        }
        let (means, scales) = standardizer(rows);
        let train = rows
            .iter()
            .map(|r| r.iter().zip(&means).zip(&scales).map(|((v, m), s)| (v - m) / s).collect())
            .collect();
        Ok(Self {
            k,
            means,
            scales,
            train,
            targets: targets.to_vec(),
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let q: Vec<f64> = row
            .iter()
            .zip(&self.means)
            .zip(&self.scales)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let mut d: Vec<(f64, usize)> = self
            .train
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, order);
        }
        let mut chosen: Vec<usize> = d[..self.k].iter().map(|p| p.1).collect();
        chosen.sort_unstable();
        chosen.iter().map(|&i| self.targets[i]).sum::<f64>() / self.k as f64
    }
}
