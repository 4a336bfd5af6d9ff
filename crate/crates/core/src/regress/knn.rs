use std::fmt;
use std::str::FromStr;

use super::{check_pairs, RegressError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

impl Metric {
    pub(crate) fn code(self) -> u8 {
        match self {
            Metric::Euclidean => 0,
            Metric::Manhattan => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Metric::Euclidean),
            1 => Some(Metric::Manhattan),
            _ => None,
        }
    }

    /// A monotone transform of the distance: squared for Euclidean.
    fn key(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
        })
    }
}

impl FromStr for Metric {
    type Err = RegressError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "manhattan" => Ok(Metric::Manhattan),
            other => Err(RegressError::Params(format!("unknown metric {other:?}"))),
        }
    }
}

/// Stored training pairs; prediction averages the `k` nearest targets.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub k: usize,
    pub metric: Metric,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

pub fn fit_knn(x: &[Vec<f64>], y: &[Vec<f64>], k: usize, metric: Metric) -> Result<KnnModel> {
    if k == 0 {
        return Err(RegressError::Params("k must be positive".into()));
    }
    check_pairs(x, y)?;
    if k > x.len() {
        return Err(RegressError::KTooLarge { k, n: x.len() });
    }
    Ok(KnnModel {
        k,
        metric,
        x: x.to_vec(),
        y: y.to_vec(),
    })
}

impl KnnModel {
    pub fn input_dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.y[0].len()
    }

    /// Training indices of the `k` nearest pairs, ordered by
    /// `(distance, index)`.
    pub fn neighbors(&self, q: &[f64]) -> Vec<usize> {
        let mut keyed: Vec<(f64, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, x)| (self.metric.key(x, q), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < keyed.len() {
            keyed.select_nth_unstable_by(self.k - 1, cmp);
            keyed.truncate(self.k);
        }
        keyed.sort_unstable_by(cmp);
        keyed.into_iter().map(|(_, i)| i).collect()
    }

    pub(super) fn predict_unchecked(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        let nn = self.neighbors(q);
        for &i in &nn {
            for (o, v) in out.iter_mut().zip(&self.y[i]) {
                *o += v;
            }
        }
        let k = nn.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        out
    }
}
