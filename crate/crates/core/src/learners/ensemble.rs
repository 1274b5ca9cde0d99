//! Tree ensembles: bagged regression forest and squared-loss gradient boosting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{RegressionTree, TreeParams};
use super::{BoostParams, ForestParams};
use crate::error::{Error, Result};

pub(crate) fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<RegressionTree>,
}

impl ForestModel {
    pub fn fit(rows: &[Vec<f64>], y: &[f64], params: &ForestParams, seed: u64) -> Result<Self> {
        if params.trees == 0 {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        if params.min_leaf == 0 {
            return Err(Error::Config("forest min_leaf must be >= 1".into()));
        }
        let n = y.len();
        let width = rows.first().map_or(0, Vec::len);
        let mtry = params
            .mtry
            .unwrap_or_else(|| (width as f64).sqrt().ceil() as usize)
            .clamp(1, width.max(1));
        let tp = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            mtry: Some(mtry),
        };
        let trees = (0..params.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = tree_rng(seed, t);
                let sample: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::grow(rows, y, sample, tp, &mut rng)
            })
            .collect();
        Ok(Self { trees })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    init: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
}

impl BoostModel {
    pub fn fit(rows: &[Vec<f64>], y: &[f64], params: &BoostParams, seed: u64) -> Result<Self> {
        if !(params.learning_rate >= 0.0) {
            return Err(Error::Config("boosting learning rate must be >= 0".into()));
        }
        if params.min_leaf == 0 {
            return Err(Error::Config("boosting min_leaf must be >= 1".into()));
        }
        let n = y.len();
        let init = y.iter().sum::<f64>() / n as f64;
        let mut fitted = vec![init; n];
        let mut trees = Vec::with_capacity(params.trees);
        let tp = TreeParams {
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            mtry: None,
        };
        let mut rng = tree_rng(seed, 0);
        if params.learning_rate > 0.0 {
            for _ in 0..params.trees {
                let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
                let tree = RegressionTree::grow(rows, &resid, (0..n).collect(), tp, &mut rng);
                for (f, r) in fitted.iter_mut().zip(rows) {
                    *f += params.learning_rate * tree.predict_row(r);
                }
                trees.push(tree);
            }
        }
        Ok(Self {
            init,
            learning_rate: params.learning_rate,
            trees,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }
}
