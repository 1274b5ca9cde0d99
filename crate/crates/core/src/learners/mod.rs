//! Point-forecast base models and the quantile regression forest.

mod ensemble;
mod knn;
mod lasso;
mod qrf;
mod tree;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

pub use ensemble::{BoostModel, ForestModel};
pub use knn::KnnModel;
pub use lasso::{fit_with_validation, lambda_max, LassoModel};
pub use qrf::{fit_qrf, qrf_quantile, QrfModel};

use crate::dataset::DesignMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Knn,
    Lear,
    Forest,
    Boost,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Knn => "knn",
            ModelKind::Lear => "lear",
            ModelKind::Forest => "forest",
            ModelKind::Boost => "boost",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(ModelKind::Knn),
            "lear" => Ok(ModelKind::Lear),
            "forest" => Ok(ModelKind::Forest),
            "boost" => Ok(ModelKind::Boost),
            other => Err(Error::Config(format!("unknown learner '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearParams {
    /// Fixed penalty; chosen on a holdout grid when absent.
    pub lambda: Option<f64>,
    pub tol: f64,
}

impl Default for LearParams {
    fn default() -> Self {
        Self { lambda: None, tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    /// Features per split, `ceil(sqrt(d))` when absent.
    pub mtry: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: 12,
            min_leaf: 1,
            bootstrap: true,
            mtry: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostParams {
    pub trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            trees: 200,
            learning_rate: 0.05,
            max_depth: 4,
            min_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QrfParams {
    pub trees: usize,
    pub max_depth: usize,
    /// Large leaves by default: residual forests are fitted on a few hundred
    /// rows and small leaves understate the spread.
    pub min_leaf: usize,
    /// Fraction of rows drawn without replacement for each tree.
    pub subsample: f64,
    /// Features per split; all when absent.
    pub mtry: Option<usize>,
}

impl Default for QrfParams {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: 8,
            min_leaf: 40,
            subsample: 0.8,
            mtry: None,
        }
    }
}

/// Hyperparameters for every learner kind (`learner.<kind>` in run configs).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerParams {
    pub knn: KnnParams,
    pub lear: LearParams,
    pub forest: ForestParams,
    pub boost: BoostParams,
}

/// Anything that maps feature rows to point predictions.
pub trait Predictor: Sync {
    fn width(&self) -> usize;
    fn predict_row(&self, row: &[f64]) -> f64;

    fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.width()) {
            return Err(Error::Shape(format!(
                "row has {} features, model expects {}",
                r.len(),
                self.width()
            )));
        }
        Ok(rows.iter().map(|r| self.predict_row(r)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "lowercase")]
enum Fitted {
    Knn(KnnModel),
    Lear(LassoModel),
    Forest(ForestModel),
    Boost(BoostModel),
}

/// A fitted point-forecast model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointModel {
    feature_names: Vec<String>,
    fitted: Fitted,
}

const MODEL_FORMAT: &str = "priceband-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: PointModel,
}

impl PointModel {
    pub fn kind(&self) -> ModelKind {
        match self.fitted {
            Fitted::Knn(_) => ModelKind::Knn,
            Fitted::Lear(_) => ModelKind::Lear,
            Fitted::Forest(_) => ModelKind::Forest,
            Fitted::Boost(_) => ModelKind::Boost,
        }
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn as_lasso(&self) -> Option<&LassoModel> {
        match &self.fitted {
            Fitted::Lear(m) => Some(m),
            _ => None,
        }
    }

    /// Versioned JSON: `{"format": "priceband-model", "version": 1, "model": ...}`.
    pub fn save_json<W: Write>(&self, out: W) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(out, &file)?;
        Ok(())
    }

    pub fn load_json<R: Read>(input: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(input)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        let m = file.model;
        let width_ok = match &m.fitted {
            Fitted::Lear(l) => l.coefficients.len() == m.feature_names.len(),
            _ => true,
        };
        if !width_ok {
            return Err(Error::Schema("model coefficients do not match feature names".into()));
        }
        Ok(m)
    }
}

impl Predictor for PointModel {
    fn width(&self) -> usize {
        self.feature_names.len()
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        match &self.fitted {
            Fitted::Knn(m) => m.predict_row(row),
            Fitted::Lear(m) => m.predict_row(row),
            Fitted::Forest(m) => m.predict_row(row),
            Fitted::Boost(m) => m.predict_row(row),
        }
    }
}

pub fn fit_point(kind: ModelKind, data: &DesignMatrix, params: &LearnerParams, seed: u64) -> Result<PointModel> {
    if data.is_empty() {
        return Err(Error::Shape("cannot fit a model on an empty design".into()));
    }
    let (rows, y) = (&data.rows, &data.targets);
    let fitted = match kind {
        ModelKind::Knn => Fitted::Knn(KnnModel::fit(rows, y, params.knn.k)?),
        ModelKind::Lear => Fitted::Lear(match params.lear.lambda {
            Some(l) => LassoModel::fit(rows, y, l, params.lear.tol)?,
            None => fit_with_validation(rows, y, params.lear.tol)?,
        }),
        ModelKind::Forest => Fitted::Forest(ForestModel::fit(rows, y, &params.forest, seed)?),
        ModelKind::Boost => Fitted::Boost(BoostModel::fit(rows, y, &params.boost, seed)?),
    };
    Ok(PointModel {
        feature_names: data.feature_names.clone(),
        fitted,
    })
}

pub fn predict_point(model: &PointModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    model.predict(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantile::{empirical_quantile, QuantileConvention};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_design(n: usize, d: usize, seed: u64) -> DesignMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y = rows
            .iter()
            .map(|r| r[0] * 3.0 - r[d - 1] + (r[0] * r[1]).sin() + rng.random_range(-0.5..0.5))
            .collect();
        DesignMatrix::from_rows(rows, y).unwrap()
    }

    fn params() -> LearnerParams {
        let mut p = LearnerParams::default();
        p.forest.trees = 20;
        p.boost.trees = 50;
        p
    }

    #[test]
    fn lear_recovers_exact_line() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.5 - 4.0]).collect();
        let y = rows.iter().map(|r| 2.0 * r[0]).collect();
        let d = DesignMatrix::from_rows(rows, y).unwrap();
        let mut p = LearnerParams::default();
        p.lear.lambda = Some(0.0);
        let m = fit_point(ModelKind::Lear, &d, &p, 0).unwrap();
        let l = m.as_lasso().unwrap();
        assert!((l.coefficients[0] - 2.0).abs() < 1e-8);
        assert!(l.intercept.abs() < 1e-8);
    }

    #[test]
    fn lear_full_shrinkage() {
        let d = random_design(100, 4, 1);
        let mut p = LearnerParams::default();
        p.lear.lambda = Some(1e6);
        let m = fit_point(ModelKind::Lear, &d, &p, 0).unwrap();
        let l = m.as_lasso().unwrap();
        assert!(l.coefficients.iter().all(|&c| c == 0.0));
        let mean = d.targets.iter().sum::<f64>() / d.len() as f64;
        assert!((l.intercept - mean).abs() < 1e-12);
    }

    #[test]
    fn lear_zero_variance_feature_gets_zero() {
        let mut d = random_design(80, 3, 2);
        for r in &mut d.rows {
            r[1] = 7.0;
        }
        let mut p = LearnerParams::default();
        p.lear.lambda = Some(0.01);
        let m = fit_point(ModelKind::Lear, &d, &p, 0).unwrap();
        assert_eq!(m.as_lasso().unwrap().coefficients[1], 0.0);
    }

    #[test]
    fn lear_kkt_conditions() {
        for seed in 0..5 {
            let d = random_design(200, 6, seed);
            for lam in [0.01, 0.1, 0.5] {
                let m = LassoModel::fit(&d.rows, &d.targets, lam, 1e-12).unwrap();
                let g = m.kkt_gradients(&d.rows, &d.targets);
                for (j, (&b, &gj)) in m.standardized.iter().zip(&g).enumerate() {
                    if b != 0.0 {
                        assert!((gj.abs() - lam).abs() < 1e-6, "seed {seed} lam {lam} j {j}: {gj}");
                        assert_eq!(gj.signum(), b.signum());
                    } else {
                        assert!(gj.abs() <= lam + 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn knn_nearest_self_and_full_mean() {
        let d = random_design(25, 3, 3);
        let mut p = LearnerParams::default();
        p.knn.k = 1;
        let m = fit_point(ModelKind::Knn, &d, &p, 0).unwrap();
        for (r, &t) in d.rows.iter().zip(&d.targets) {
            assert_eq!(m.predict_row(r), t);
        }
        p.knn.k = d.len();
        let m = fit_point(ModelKind::Knn, &d, &p, 0).unwrap();
        let mean: f64 = d.targets.iter().sum::<f64>() / d.len() as f64;
        assert!((m.predict_row(&[9.0, -9.0, 0.0]) - mean).abs() < 1e-12);
    }

    #[test]
    fn knn_ties_go_to_lowest_index() {
        let rows = vec![vec![1.0], vec![-1.0], vec![3.0]];
        let d = DesignMatrix::from_rows(rows, vec![10.0, 20.0, 30.0]).unwrap();
        let mut p = LearnerParams::default();
        p.knn.k = 1;
        let m = fit_point(ModelKind::Knn, &d, &p, 0).unwrap();
        // 0.0 is equidistant from rows 0 and 1 once standardised
        let mean = 1.0;
        assert_eq!(m.predict_row(&[mean]), 10.0);
    }

    #[test]
    fn invalid_hyperparameters() {
        let d = random_design(10, 2, 4);
        let mut p = LearnerParams::default();
        p.knn.k = 0;
        assert!(matches!(fit_point(ModelKind::Knn, &d, &p, 0), Err(Error::Config(_))));
        p.knn.k = 11;
        assert!(fit_point(ModelKind::Knn, &d, &p, 0).is_err());
        let mut p = LearnerParams::default();
        p.lear.lambda = Some(-1.0);
        assert!(fit_point(ModelKind::Lear, &d, &p, 0).is_err());
        let mut p = LearnerParams::default();
        p.forest.trees = 0;
        assert!(fit_point(ModelKind::Forest, &d, &p, 0).is_err());
        assert!(fit_point(ModelKind::Lear, &d.slice(0..0), &LearnerParams::default(), 0).is_err());
    }

    #[test]
    fn stump_forest_and_unlearned_boost_predict_mean() {
        let d = random_design(40, 3, 5);
        let mean = d.targets.iter().sum::<f64>() / d.len() as f64;
        let mut p = LearnerParams::default();
        p.forest = ForestParams { trees: 1, max_depth: 0, bootstrap: false, ..Default::default() };
        let f = fit_point(ModelKind::Forest, &d, &p, 1).unwrap();
        p.boost.learning_rate = 0.0;
        let b = fit_point(ModelKind::Boost, &d, &p, 1).unwrap();
        for r in &d.rows {
            assert!((f.predict_row(r) - mean).abs() < 1e-12);
            assert!((b.predict_row(r) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn trees_beat_constant_in_sample() {
        let d = random_design(150, 4, 6);
        let mean = d.targets.iter().sum::<f64>() / d.len() as f64;
        let base: f64 = d.targets.iter().map(|t| (t - mean).powi(2)).sum();
        for kind in [ModelKind::Forest, ModelKind::Boost] {
            let m = fit_point(kind, &d, &params(), 3).unwrap();
            let mse: f64 = d.rows.iter().zip(&d.targets).map(|(r, t)| (t - m.predict_row(r)).powi(2)).sum();
            assert!(mse <= base, "{kind}");
        }
    }

    #[test]
    fn fits_are_deterministic() {
        let d = random_design(120, 4, 7);
        for kind in [ModelKind::Knn, ModelKind::Lear, ModelKind::Forest, ModelKind::Boost] {
            let a = fit_point(kind, &d, &params(), 9).unwrap();
            let b = fit_point(kind, &d, &params(), 9).unwrap();
            assert_eq!(a.predict(&d.rows).unwrap(), b.predict(&d.rows).unwrap());
        }
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let d = random_design(20, 3, 8);
        let m = fit_point(ModelKind::Lear, &d, &LearnerParams::default(), 0).unwrap();
        assert!(matches!(predict_point(&m, &[vec![1.0]]), Err(Error::Shape(_))));
    }

    #[test]
    fn model_json_round_trip() {
        let d = random_design(60, 3, 10);
        for kind in [ModelKind::Knn, ModelKind::Lear, ModelKind::Forest, ModelKind::Boost] {
            let m = fit_point(kind, &d, &params(), 1).unwrap();
            let mut buf = Vec::new();
            m.save_json(&mut buf).unwrap();
            let back = PointModel::load_json(buf.as_slice()).unwrap();
            assert_eq!(back.predict(&d.rows).unwrap(), m.predict(&d.rows).unwrap());
        }
        assert!(PointModel::load_json(&br#"{"format":"x","version":1,"model":{}}"#[..]).is_err());
    }

    #[test]
    fn qrf_constant_targets() {
        let mut d = random_design(50, 2, 11);
        d.targets.iter_mut().for_each(|t| *t = 3.5);
        let q = fit_qrf(&d, &QrfParams::default(), 0).unwrap();
        for p in [0.05, 0.5, 0.95] {
            assert_eq!(q.quantile(&[0.0, 0.0], p, QuantileConvention::Conformal).unwrap(), 3.5);
        }
    }

    #[test]
    fn qrf_single_stump_matches_empirical() {
        let d = random_design(37, 2, 12);
        let params = QrfParams { trees: 1, max_depth: 0, min_leaf: 1, subsample: 1.0, mtry: None };
        let q = fit_qrf(&d, &params, 0).unwrap();
        for conv in [QuantileConvention::Higher, QuantileConvention::Conformal, QuantileConvention::Linear] {
            for i in 1..20 {
                let p = i as f64 / 20.0;
                assert_eq!(
                    q.quantile(&d.rows[0], p, conv).unwrap(),
                    empirical_quantile(&d.targets, p, conv).unwrap()
                );
            }
        }
    }

    #[test]
    fn qrf_small_pools() {
        let params = QrfParams { trees: 1, max_depth: 0, min_leaf: 1, subsample: 1.0, mtry: None };
        let d = DesignMatrix::from_rows(vec![vec![0.0]; 3], vec![1.0, 2.0, 3.0]).unwrap();
        let q = fit_qrf(&d, &params, 0).unwrap();
        assert_eq!(q.quantile(&[0.0], 0.5, QuantileConvention::Higher).unwrap(), 2.0);
        assert_eq!(q.quantile(&[0.0], 0.5, QuantileConvention::Conformal).unwrap(), 2.0);
        let d = DesignMatrix::from_rows(vec![vec![0.0]; 2], vec![1.0, 3.0]).unwrap();
        let q = fit_qrf(&d, &params, 0).unwrap();
        assert_eq!(q.quantile(&[0.0], 0.5, QuantileConvention::Conformal).unwrap(), 3.0);
        assert_eq!(q.quantile(&[0.0], 0.5, QuantileConvention::Higher).unwrap(), 1.0);
    }

    #[test]
    fn qrf_monotone_and_bounded() {
        let d = random_design(200, 3, 13);
        let q = fit_qrf(&d, &QrfParams::default(), 4).unwrap();
        let lo = d.targets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let row: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = q.quantile(&row, 0.1, QuantileConvention::Conformal).unwrap();
            let b = q.quantile(&row, 0.9, QuantileConvention::Conformal).unwrap();
            assert!(a <= b);
            assert!(lo <= a && b <= hi);
        }
    }

    #[test]
    fn qrf_rejects_oversized_leaf() {
        let d = random_design(10, 2, 14);
        let params = QrfParams { min_leaf: 11, ..Default::default() };
        assert!(matches!(fit_qrf(&d, &params, 0), Err(Error::Config(_))));
    }
}
