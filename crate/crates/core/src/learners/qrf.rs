//! Quantile regression forest: CART trees whose leaves keep their training
//! targets. A query's conditional distribution pools the reached leaves, each
//! tree contributing weight `1 / (trees * leaf_size)` per stored sample.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::tree_rng;
use super::tree::{RegressionTree, TreeParams};
use super::QrfParams;
use crate::dataset::DesignMatrix;
use crate::error::{Error, Result};
use crate::quantile::{weighted_quantile, QuantileConvention};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrfModel {
    trees: Vec<RegressionTree>,
    targets: Vec<f64>,
    width: usize,
    seed: u64,
}

pub fn fit_qrf(data: &DesignMatrix, params: &QrfParams, seed: u64) -> Result<QrfModel> {
    QrfModel::fit(&data.rows, &data.targets, params, seed)
}

impl QrfModel {
    pub fn fit(rows: &[Vec<f64>], y: &[f64], params: &QrfParams, seed: u64) -> Result<Self> {
        let n = y.len();
        if n == 0 || rows.len() != n {
            return Err(Error::Shape("quantile forest needs aligned non-empty data".into()));
        }
        if params.trees == 0 {
            return Err(Error::Config("quantile forest needs at least one tree".into()));
        }
        if params.min_leaf == 0 || params.min_leaf > n {
            return Err(Error::Config(format!(
                "quantile forest min_leaf {} must lie in [1, {n}]",
                params.min_leaf
            )));
        }
        if !(params.subsample > 0.0 && params.subsample <= 1.0) {
            return Err(Error::Config("quantile forest subsample must lie in (0, 1]".into()));
        }
        let width = rows[0].len();
        let draw = ((params.subsample * n as f64).round() as usize).clamp(1, n);
        let tp = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            mtry: params.mtry,
        };
        let trees = (0..params.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = tree_rng(seed, t);
                let mut idx: Vec<usize> = if draw == n {
                    (0..n).collect()
                } else {
                    sample(&mut rng, n, draw).into_vec()
                };
                idx.sort_unstable();
                RegressionTree::grow(rows, y, idx, tp, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            targets: y.to_vec(),
            width,
            seed,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Pooled (target, weight) pairs for a query, weights summing to one.
    pub fn pooled(&self, row: &[f64]) -> Result<Vec<(f64, f64)>> {
        if row.len() != self.width {
            return Err(Error::Shape(format!(
                "query has {} features, forest expects {}",
                row.len(),
                self.width
            )));
        }
        let mut w = vec![0.0; self.targets.len()];
        let per_tree = 1.0 / self.trees.len() as f64;
        for t in &self.trees {
            let members = t.leaf_members(row);
            let each = per_tree / members.len() as f64;
            for &i in members {
                w[i as usize] += each;
            }
        }
        Ok(w.iter()
            .enumerate()
            .filter(|(_, &wi)| wi > 0.0)
            .map(|(i, &wi)| (self.targets[i], wi))
            .collect())
    }

    pub fn quantile(&self, row: &[f64], p: f64, convention: QuantileConvention) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("quantile level {p} outside (0, 1)")));
        }
        weighted_quantile(&self.pooled(row)?, p, convention)
    }

    pub fn quantiles(&self, row: &[f64], levels: &[f64], convention: QuantileConvention) -> Result<Vec<f64>> {
        let pooled = self.pooled(row)?;
        levels
            .iter()
            .map(|&p| {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Config(format!("quantile level {p} outside (0, 1)")));
                }
                weighted_quantile(&pooled, p, convention)
            })
            .collect()
    }
}

pub fn qrf_quantile(model: &QrfModel, row: &[f64], p: f64, convention: QuantileConvention) -> Result<f64> {
    model.quantile(row, p, convention)
}
