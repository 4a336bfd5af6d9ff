//! BFREG1 regressor files.
//!
//! ```text
//! "BFREG1" u32:version u8:kind(0 knn, 1 ridge, 2 forest) u32:D u32:F
//! knn:    u32:k u8:metric u32:N { f64*D f64*F }*N
//! ridge:  f64:lambda f64*((D+1)*F)
//! forest: u32:trees u32:max_depth(u32::MAX = none) u32:min_leaf
//!         u32:features(0 = auto) u8:bootstrap u64:seed
//!         { u32:nodes { u8:0 f64*F | u8:1 u32:feature f64:threshold u32:left u32:right }* }*
//! ```
//! Everything little-endian.

use std::fs;
use std::path::Path;

use super::forest::{ForestModel, ForestParams, Node, Tree};
use super::knn::{KnnModel, Metric};
use super::ridge::RidgeModel;
use super::{RegressError, RegressorModel, Result};
use crate::codec::{ByteReader, ByteWriter, DecodeError};

pub const REGRESSOR_MAGIC: &[u8; 6] = b"BFREG1";
const VERSION: u32 = 1;

impl RegressorModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        let kind = match self {
            RegressorModel::Knn(_) => 0,
            RegressorModel::Ridge(_) => 1,
            RegressorModel::RandomForest(_) => 2,
        };
        w.bytes(REGRESSOR_MAGIC)
            .u32(VERSION)
            .u8(kind)
            .usize32(self.input_dim())
            .usize32(self.output_dim());
        match self {
            RegressorModel::Knn(m) => {
                w.usize32(m.k).u8(m.metric.code()).usize32(m.x.len());
                for (x, y) in m.x.iter().zip(&m.y) {
                    w.f64s(x).f64s(y);
                }
            }
            RegressorModel::Ridge(m) => {
                w.f64(m.lambda).f64s(&m.weights);
            }
            RegressorModel::RandomForest(m) => {
                let p = &m.params;
                w.usize32(p.tree_count)
                    .u32(p.max_depth.map_or(u32::MAX, |d| d.min(u32::MAX as usize - 1) as u32))
                    .usize32(p.min_leaf)
                    .u32(p.features_per_split.map_or(0, |f| f.min(u32::MAX as usize) as u32))
                    .u8(u8::from(p.bootstrap))
                    .u64(p.seed);
                for t in &m.trees {
                    w.usize32(t.nodes.len());
                    for node in &t.nodes {
                        match node {
                            Node::Leaf { value } => {
                                w.u8(0).f64s(value);
                            }
                            Node::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            } => {
                                w.u8(1).usize32(*feature).f64(*threshold).usize32(*left).usize32(*right);
                            }
                        }
                    }
                }
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        let model = decode(&mut r).map_err(|e| RegressError::Format(e.to_string()))?;
        if r.remaining() != 0 {
            return Err(RegressError::Format(r.err("trailing bytes").to_string()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| RegressError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|source| RegressError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&buf)
    }
}

fn decode(r: &mut ByteReader<'_>) -> std::result::Result<RegressorModel, DecodeError> {
    r.expect_magic(REGRESSOR_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let kind = r.u8()?;
    let d = r.usize32()?;
    let f = r.usize32()?;
    if d == 0 || f == 0 {
        return Err(r.err("zero dimension"));
    }
    let finite = |r: &ByteReader<'_>, v: &[f64]| {
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(r.err("non-finite value"))
        }
    };
    match kind {
        0 => {
            let k = r.usize32()?;
            let metric = Metric::from_code(r.u8()?).ok_or_else(|| r.err("unknown metric"))?;
            let n = r.usize32()?;
            if k == 0 || k > n {
                return Err(r.err(format!("k = {k} with {n} pairs")));
            }
            if n.checked_mul(8 * (d + f)).is_none_or(|bytes| bytes > r.remaining()) {
                return Err(r.err("truncated training pairs"));
            }
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                x.push(r.f64s(d)?);
                y.push(r.f64s(f)?);
                finite(r, x.last().unwrap())?;
                finite(r, y.last().unwrap())?;
            }
            Ok(RegressorModel::Knn(KnnModel { k, metric, x, y }))
        }
        1 => {
            let lambda = r.f64()?;
            if !(lambda >= 0.0) {
                return Err(r.err("negative lambda"));
            }
            let weights = r.f64s((d + 1) * f)?;
            finite(r, &weights)?;
            Ok(RegressorModel::Ridge(RidgeModel {
                lambda,
                input_dim: d,
                output_dim: f,
                weights,
            }))
        }
        2 => {
            let tree_count = r.usize32()?;
            let max_depth = match r.u32()? {
                u32::MAX => None,
                v => Some(v as usize),
            };
            let min_leaf = r.usize32()?;
            let features_per_split = match r.u32()? {
                0 => None,
                v => Some(v as usize),
            };
            let bootstrap = r.u8()? != 0;
            let seed = r.u64()?;
            if tree_count == 0 {
                return Err(r.err("forest without trees"));
            }
            let mut trees = Vec::with_capacity(tree_count.min(1 << 16));
            for t in 0..tree_count {
                let count = r.usize32()?;
                if count > r.remaining() {
                    return Err(r.err("truncated tree"));
                }
                let mut nodes = Vec::with_capacity(count);
                for _ in 0..count {
                    nodes.push(match r.u8()? {
                        0 => Node::Leaf { value: r.f64s(f)? },
                        1 => Node::Split {
                            feature: r.usize32()?,
                            threshold: r.f64()?,
                            left: r.usize32()?,
                            right: r.usize32()?,
                        },
                        other => return Err(r.err(format!("unknown node tag {other}"))),
                    });
                }
                let tree = Tree { nodes };
                if !tree.is_well_formed(d, f) {
                    return Err(r.err(format!("tree {t} is malformed")));
                }
                trees.push(tree);
            }
            Ok(RegressorModel::RandomForest(ForestModel {
                params: ForestParams {
                    tree_count,
                    max_depth,
                    min_leaf,
                    features_per_split,
                    bootstrap,
                    seed,
                },
                input_dim: d,
                output_dim: f,
                trees,
            }))
        }
        other => Err(r.err(format!("unknown regressor kind {other}"))),
    }
}
