//! Regression from image features onto the EEG feature space.
//!
//! Inputs `x` have dimension D, targets `y` dimension F. All three kinds
//! predict the whole target vector at once.

mod forest;
mod format;
mod knn;
mod ridge;

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use forest::{fit_random_forest, ForestModel, ForestParams, Node, Tree};
pub use format::REGRESSOR_MAGIC;
pub use knn::{fit_knn, KnnModel, Metric};
pub use ridge::{fit_ridge, RidgeModel};

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no training pairs")]
    Empty,
    #[error("k = {k} exceeds the {n} training pairs")]
    KTooLarge { k: usize, n: usize },
    #[error("normal equations are singular (rank-deficient inputs); use lambda > 0")]
    Singular,
    #[error("invalid regressor parameters: {0}")]
    Params(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("regressor file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, RegressError>;

/// Checks that `x` and `y` pair up with constant, positive dimensions and
/// finite values; returns `(D, F)`.
pub fn check_pairs(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<(usize, usize)> {
    if x.len() != y.len() {
        return Err(RegressError::Dimension(format!("{} inputs but {} targets", x.len(), y.len())));
    }
    let (d, f) = match (x.first(), y.first()) {
        (Some(a), Some(b)) => (a.len(), b.len()),
        _ => return Err(RegressError::Empty),
    };
    if d == 0 || f == 0 {
        return Err(RegressError::Dimension("zero-length vectors".into()));
    }
    for (i, (a, b)) in x.iter().zip(y).enumerate() {
        if a.len() != d || b.len() != f {
            return Err(RegressError::Dimension(format!(
                "pair {i} has dimensions ({}, {}), expected ({d}, {f})",
                a.len(),
                b.len()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(RegressError::NonFinite("inputs"));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(RegressError::NonFinite("targets"));
        }
    }
    Ok((d, f))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegressorModel {
    Knn(KnnModel),
    Ridge(RidgeModel),
    RandomForest(ForestModel),
}

impl RegressorModel {
    pub fn kind(&self) -> &'static str {
        match self {
            RegressorModel::Knn(_) => "knn",
            RegressorModel::Ridge(_) => "ridge",
            RegressorModel::RandomForest(_) => "random_forest",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            RegressorModel::Knn(m) => m.input_dim(),
            RegressorModel::Ridge(m) => m.input_dim(),
            RegressorModel::RandomForest(m) => m.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            RegressorModel::Knn(m) => m.output_dim(),
            RegressorModel::Ridge(m) => m.output_dim(),
            RegressorModel::RandomForest(m) => m.output_dim,
        }
    }

    /// The fitting parameters in [`RegressorSpec`] notation.
    pub fn spec(&self) -> RegressorSpec {
        match self {
            RegressorModel::Knn(m) => RegressorSpec::Knn { k: m.k, metric: m.metric },
            RegressorModel::Ridge(m) => RegressorSpec::Ridge { lambda: m.lambda },
            RegressorModel::RandomForest(m) => RegressorSpec::RandomForest(m.params.clone()),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(RegressError::Dimension(format!(
                "query has {} components, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(match self {
            RegressorModel::Knn(m) => m.predict_unchecked(x),
            RegressorModel::Ridge(m) => m.predict_unchecked(x),
            RegressorModel::RandomForest(m) => m.predict_unchecked(x),
        })
    }

    /// Predictions in query order.
    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }
}

/// Regressor kind and hyperparameters, written `knn:k=5`,
/// `ridge:lambda=1` or `random_forest:trees=100,depth=12,min_leaf=2`.
#[derive(Debug, Clone, PartialEq)]
pub enum RegressorSpec {
    Knn { k: usize, metric: Metric },
    Ridge { lambda: f64 },
    RandomForest(ForestParams),
}

impl RegressorSpec {
    pub fn knn(k: usize) -> Self {
        RegressorSpec::Knn {
            k,
            metric: Metric::Euclidean,
        }
    }

    pub fn ridge(lambda: f64) -> Self {
        RegressorSpec::Ridge { lambda }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RegressorSpec::Knn { .. } => "knn",
            RegressorSpec::Ridge { .. } => "ridge",
            RegressorSpec::RandomForest(_) => "random_forest",
        }
    }

    /// Parameter list without the kind prefix.
    pub fn params(&self) -> String {
        match self {
            RegressorSpec::Knn { k, metric } => match metric {
                Metric::Euclidean => format!("k={k}"),
                m => format!("k={k},metric={m}"),
            },
            RegressorSpec::Ridge { lambda } => format!("lambda={lambda}"),
            RegressorSpec::RandomForest(p) => p.to_string(),
        }
    }

    pub fn fit(&self, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<RegressorModel> {
        match self {
            RegressorSpec::Knn { k, metric } => fit_knn(x, y, *k, *metric).map(RegressorModel::Knn),
            RegressorSpec::Ridge { lambda } => fit_ridge(x, y, *lambda).map(RegressorModel::Ridge),
            RegressorSpec::RandomForest(p) => fit_random_forest(x, y, p).map(RegressorModel::RandomForest),
        }
    }
}

impl Default for RegressorSpec {
    fn default() -> Self {
        RegressorSpec::knn(5)
    }
}

impl fmt::Display for RegressorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind(), self.params())
    }
}

fn parse_kv(params: &str) -> Result<Vec<(String, String)>> {
    params
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| RegressError::Params(format!("expected key=value, found {p:?}")))
        })
        .collect()
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| RegressError::Params(format!("{key}: cannot parse {value:?}")))
}

impl FromStr for RegressorSpec {
    type Err = RegressError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let kv = parse_kv(params)?;
        let unknown = |k: &str| RegressError::Params(format!("{kind}: unknown parameter {k:?}"));
        match kind {
            "knn" => {
                let mut k = 5;
                let mut metric = Metric::Euclidean;
                for (key, v) in &kv {
                    match key.as_str() {
                        "k" => k = parse_num(key, v)?,
                        "metric" => metric = v.parse()?,
                        _ => return Err(unknown(key)),
                    }
                }
                Ok(RegressorSpec::Knn { k, metric })
            }
            "ridge" => {
                let mut lambda = 1.0;
                for (key, v) in &kv {
                    match key.as_str() {
                        "lambda" => lambda = parse_num(key, v)?,
                        _ => return Err(unknown(key)),
                    }
                }
                Ok(RegressorSpec::Ridge { lambda })
            }
            "random_forest" | "forest" => {
                let mut p = ForestParams::default();
                for (key, v) in &kv {
                    match key.as_str() {
                        "trees" => p.tree_count = parse_num(key, v)?,
                        "depth" => p.max_depth = if v == "none" { None } else { Some(parse_num(key, v)?) },
                        "min_leaf" => p.min_leaf = parse_num(key, v)?,
                        "features" => {
                            p.features_per_split = if v == "auto" { None } else { Some(parse_num(key, v)?) }
                        }
                        "bootstrap" => p.bootstrap = parse_num(key, v)?,
                        "seed" => p.seed = parse_num(key, v)?,
                        _ => return Err(unknown(key)),
                    }
                }
                Ok(RegressorSpec::RandomForest(p))
            }
            other => Err(RegressError::Params(format!(
                "unknown regressor {other:?} (expected knn, ridge or random_forest)"
            ))),
        }
    }
}

/// Mean squared error of one regressor on a test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionReport {
    pub kind: String,
    pub params: String,
    pub mse: f64,
    pub train_count: usize,
    pub test_count: usize,
}

impl RegressionReport {
    /// `kind, params, mse`
    pub fn to_row(&self) -> String {
        format!("{}, {}, {}", self.kind, self.params, self.mse)
    }
}

/// `kind, params, mse` rows under a header line.
pub fn report_rows(reports: &[RegressionReport]) -> String {
    let mut out = String::from("kind, params, mse\n");
    for r in reports {
        let _ = writeln!(out, "{}", r.to_row());
    }
    out
}

/// `(1 / (N F)) sum ||p - y||^2`.
pub fn mse(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(RegressError::Dimension(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let f = targets.first().ok_or(RegressError::Empty)?.len();
    let mut total = 0.0;
    for (p, y) in predictions.iter().zip(targets) {
        if p.len() != f || y.len() != f {
            return Err(RegressError::Dimension("ragged prediction or target".into()));
        }
        total += p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / (targets.len() * f) as f64)
}

/// Predicts every test input and scores against the targets. `train_count`
/// is carried into the report as provenance.
pub fn evaluate_mse(
    model: &RegressorModel,
    x_test: &[Vec<f64>],
    y_test: &[Vec<f64>],
    train_count: usize,
) -> Result<RegressionReport> {
    let (_, f) = check_pairs(x_test, y_test)?;
    if f != model.output_dim() {
        return Err(RegressError::Dimension(format!(
            "targets have {f} components, model predicts {}",
            model.output_dim()
        )));
    }
    let predictions = model.predict_many(x_test)?;
    let spec = model.spec();
    Ok(RegressionReport {
        kind: spec.kind().to_string(),
        params: spec.params(),
        mse: mse(&predictions, y_test)?,
        train_count,
        test_count: x_test.len(),
    })
}
