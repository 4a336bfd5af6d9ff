use std::fmt;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;

use super::{check_pairs, RegressError, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub tree_count: usize,
    /// Root is depth 0; `Some(2)` allows two levels of splits.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features examined per split; `None` means `ceil(sqrt(D))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    /// Tree `t` uses seed `seed + t`.
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            tree_count: 100,
            max_depth: Some(12),
            min_leaf: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    /// One exhaustive tree on the full data.
    pub fn single_tree(max_depth: Option<usize>, min_leaf: usize) -> Self {
        Self {
            tree_count: 1,
            max_depth,
            min_leaf,
            features_per_split: Some(usize::MAX),
            bootstrap: false,
            seed: 0,
        }
    }

    fn mtry(&self, d: usize) -> usize {
        match self.features_per_split {
            Some(m) => m.min(d),
            None => (d as f64).sqrt().ceil() as usize,
        }
    }
}

impl fmt::Display for ForestParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trees={},depth=", self.tree_count)?;
        match self.max_depth {
            Some(d) => write!(f, "{d}")?,
            None => f.write_str("none")?,
        }
        write!(f, ",min_leaf={},features=", self.min_leaf)?;
        match self.features_per_split {
            Some(m) => write!(f, "{m}")?,
            None => f.write_str("auto")?,
        }
        write!(f, ",bootstrap={},seed={}", self.bootstrap, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        value: Vec<f64>,
    },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in preorder; the root is node 0 and children follow their parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    /// Children point forward and are referenced once, features are in
    /// range, and values are finite with `f` components.
    pub fn is_well_formed(&self, d: usize, f: usize) -> bool {
        let mut refs = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Leaf { value } => {
                    if value.len() != f || value.iter().any(|v| !v.is_finite()) {
                        return false;
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= d || !threshold.is_finite() {
                        return false;
                    }
                    for &c in [left, right] {
                        if c <= i || c >= self.nodes.len() {
                            return false;
                        }
                        refs[c] += 1;
                    }
                }
            }
        }
        !self.nodes.is_empty() && refs[0] == 0 && refs[1..].iter().all(|&r| r == 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub params: ForestParams,
    pub input_dim: usize,
    pub output_dim: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Mean of the tree predictions, summed in tree order.
    pub(super) fn predict_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim];
        for t in &self.trees {
            for (o, v) in out.iter_mut().zip(t.predict(x)) {
                *o += v;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

pub fn fit_random_forest(x: &[Vec<f64>], y: &[Vec<f64>], params: &ForestParams) -> Result<ForestModel> {
    let (d, f) = check_pairs(x, y)?;
    if params.tree_count == 0 || params.min_leaf == 0 || params.features_per_split == Some(0) {
        return Err(RegressError::Params(format!("invalid forest parameters {params}")));
    }
    if x.len() < params.min_leaf {
        return Err(RegressError::Params(format!(
            "{} training pairs, fewer than min_leaf = {}",
            x.len(),
            params.min_leaf
        )));
    }
    let builder = Builder {
        x,
        y,
        d,
        f,
        mtry: params.mtry(d),
        max_depth: params.max_depth.unwrap_or(usize::MAX),
        min_leaf: params.min_leaf,
    };
    let trees = (0..params.tree_count)
        .into_par_iter()
        .map(|t| {
            let seed = params.seed.wrapping_add(t as u64);
            let n = x.len();
            let sample: Vec<usize> = if params.bootstrap {
                let mut rng = rng::stream(seed, &[0xb007]);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut nodes = Vec::new();
            builder.grow(sample, 0, rng::derive_seed(seed, &[0x7ee]), &mut nodes);
            Tree { nodes }
        })
        .collect();
    Ok(ForestModel {
        params: params.clone(),
        input_dim: d,
        output_dim: f,
        trees,
    })
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [Vec<f64>],
    d: usize,
    f: usize,
    mtry: usize,
    max_depth: usize,
    min_leaf: usize,
}

struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    /// Grows the subtree over `idx` (indices may repeat) and returns its node
    /// id. Node seeds are derived from the path, so a tree grown to a smaller
    /// depth is a prefix of a deeper one.
    fn grow(&self, idx: Vec<usize>, depth: usize, seed: u64, nodes: &mut Vec<Node>) -> usize {
        let id = nodes.len();
        let n = idx.len();
        let mut mean = vec![0.0; self.f];
        for &i in &idx {
            for (m, v) in mean.iter_mut().zip(&self.y[i]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        let split = if pure || depth >= self.max_depth || n < 2 * self.min_leaf {
            None
        } else {
            self.best_split(&idx, &mean, seed)
        };
        let Some(c) = split else {
            nodes.push(Node::Leaf { value: mean });
            return id;
        };
        nodes.push(Node::Leaf { value: Vec::new() });
        let (left, right): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][c.feature] <= c.threshold);
        let l = self.grow(left, depth + 1, rng::derive_seed(seed, &[1]), nodes);
        let r = self.grow(right, depth + 1, rng::derive_seed(seed, &[2]), nodes);
        nodes[id] = Node::Split {
            feature: c.feature,
            threshold: c.threshold,
            left: l,
            right: r,
        };
        id
    }

    /// Maximizes `|S_L|^2 / n_L + |S_R|^2 / n_R` over centred targets, which
    /// is equivalent to minimizing the summed squared error of the children.
    /// Ties keep the earliest (feature, threshold) in ascending order.
    fn best_split(&self, idx: &[usize], mean: &[f64], seed: u64) -> Option<Candidate> {
        let n = idx.len();
        let features: Vec<usize> = if self.mtry >= self.d {
            (0..self.d).collect()
        } else {
            let mut rng = rng::stream(seed, &[0xfea7]);
            let mut f = index::sample(&mut rng, self.d, self.mtry).into_vec();
            f.sort_unstable();
            f
        };
        let centred: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| self.y[i].iter().zip(mean).map(|(v, m)| v - m).collect())
            .collect();
        let mut total = vec![0.0; self.f];
        for c in &centred {
            for (t, v) in total.iter_mut().zip(c) {
                *t += v;
            }
        }
        let mut best: Option<Candidate> = None;
        let mut order: Vec<usize> = (0..n).collect();
        let mut left = vec![0.0; self.f];
        for &feat in &features {
            let key = |k: usize| self.x[idx[k]][feat];
            order.sort_unstable_by(|&a, &b| key(a).total_cmp(&key(b)).then(idx[a].cmp(&idx[b])));
            left.iter_mut().for_each(|v| *v = 0.0);
            for p in 1..n {
                for (l, v) in left.iter_mut().zip(&centred[order[p - 1]]) {
                    *l += v;
                }
                let (a, b) = (key(order[p - 1]), key(order[p]));
                if p < self.min_leaf || n - p < self.min_leaf || !(a < b) {
                    continue;
                }
                let ls: f64 = left.iter().map(|v| v * v).sum();
                let rs: f64 = left.iter().zip(&total).map(|(l, t)| (t - l) * (t - l)).sum();
                let score = ls / p as f64 + rs / (n - p) as f64;
                if best.as_ref().is_none_or(|c| score > c.score) {
                    let mid = a + (b - a) / 2.0;
                    best = Some(Candidate {
                        score,
                        feature: feat,
                        threshold: if mid < b { mid } else { a },
                    });
                }
            }
        }
        best
    }
}
