//! Per-sequence EEG feature vectors and their reduction to one vector per
//! image.
//!
//! Un-aggregated tables keep vectors in the order they were inserted, so the
//! aggregations can be checked for order invariance. Raw tables are stored
//! as BFEFT1:
//!
//! ```text
//! "BFEFT1" u8:aggregation u32:count u32:dim
//! { u32:image_id u32:subject_id f64:loss f64*dim }*count
//! ```
//! Everything little-endian.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{ByteReader, ByteWriter, DecodeError};
use crate::eeg::{Dataset, ImageFeatureTable};
use crate::encoder::{EncoderError, EncoderModel};

pub const FEATURE_TABLE_MAGIC: &[u8; 6] = b"BFEFT1";

/// Subject id recorded on averaged vectors, which belong to no one subject.
pub const AVERAGED_SUBJECT: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("image {image_id}, subject {subject_id}: dimension {found} != {expected}")]
    Dimension {
        image_id: u32,
        subject_id: u32,
        expected: usize,
        found: usize,
    },
    #[error("image {image_id}, subject {subject_id}: {msg}")]
    Invalid { image_id: u32, subject_id: u32, msg: String },
    #[error("image {0} has no feature vectors")]
    EmptyImage(u32),
    #[error("table is already aggregated ({0})")]
    AlreadyAggregated(Aggregation),
    #[error("table is not aggregated")]
    NotAggregated,
    #[error("feature table file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ManifoldError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aggregation {
    None,
    Average,
    Best,
}

impl Aggregation {
    pub const REDUCTIONS: [Aggregation; 2] = [Aggregation::Average, Aggregation::Best];

    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::None => "none",
            Aggregation::Average => "average",
            Aggregation::Best => "best",
        }
    }

    /// Provenance tag written into exported image-feature files.
    pub fn source_tag(self) -> String {
        format!("eeg:{}", self.as_str())
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        [Aggregation::None, Aggregation::Average, Aggregation::Best]
            .into_iter()
            .find(|a| a.code() == c)
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "none" => Ok(Aggregation::None),
            "average" => Ok(Aggregation::Average),
            "best" => Ok(Aggregation::Best),
            other => Err(format!("unknown aggregation {other:?} (expected none, average or best)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EegFeatureVector {
    pub image_id: u32,
    pub subject_id: u32,
    pub values: Vec<f64>,
    /// Head cross-entropy on `values` against the image's class.
    pub classification_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    aggregation: Aggregation,
    entries: BTreeMap<u32, Vec<EegFeatureVector>>,
}

impl FeatureTable {
    /// Validates dimension, finiteness and uniqueness of `(image, subject)`.
    /// Aggregated tables must hold exactly one vector per image.
    pub fn new(dim: usize, aggregation: Aggregation, vectors: Vec<EegFeatureVector>) -> Result<Self> {
        let mut entries: BTreeMap<u32, Vec<EegFeatureVector>> = BTreeMap::new();
        for v in vectors {
            let invalid = |msg: &str| ManifoldError::Invalid {
                image_id: v.image_id,
                subject_id: v.subject_id,
                msg: msg.to_string(),
            };
            if v.values.len() != dim {
                return Err(ManifoldError::Dimension {
                    image_id: v.image_id,
                    subject_id: v.subject_id,
                    expected: dim,
                    found: v.values.len(),
                });
            }
            if v.values.iter().any(|x| !x.is_finite()) {
                return Err(invalid("non-finite feature value"));
            }
            if !(v.classification_loss >= 0.0) || !v.classification_loss.is_finite() {
                return Err(invalid("classification loss must be finite and non-negative"));
            }
            let list = entries.entry(v.image_id).or_default();
            if list.iter().any(|o| o.subject_id == v.subject_id) {
                return Err(invalid("duplicate vector"));
            }
            if aggregation != Aggregation::None && !list.is_empty() {
                return Err(invalid("aggregated table has several vectors for one image"));
            }
            list.push(v);
        }
        Ok(Self {
            dim,
            aggregation,
            entries,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    /// Number of images.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vector_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Vectors of one image in insertion order.
    pub fn get(&self, image_id: u32) -> Option<&[EegFeatureVector]> {
        self.entries.get(&image_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[EegFeatureVector])> {
        self.entries.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn vectors(&self) -> impl Iterator<Item = &EegFeatureVector> {
        self.entries.values().flatten()
    }

    pub fn image_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    /// The single vector of an image in an aggregated table.
    pub fn target(&self, image_id: u32) -> Option<&[f64]> {
        match self.aggregation {
            Aggregation::None => None,
            _ => self.entries.get(&image_id).map(|v| v[0].values.as_slice()),
        }
    }

    pub fn restrict(&self, keep: impl Fn(u32) -> bool) -> Self {
        Self {
            dim: self.dim,
            aggregation: self.aggregation,
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keep(**k))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
        }
    }

    /// Per-image targets of an aggregated table, tagged `eeg:<aggregation>`.
    pub fn to_image_features(&self) -> Result<ImageFeatureTable> {
        if self.aggregation == Aggregation::None {
            return Err(ManifoldError::NotAggregated);
        }
        let vectors = self.entries.iter().map(|(k, v)| (*k, v[0].values.clone())).collect();
        ImageFeatureTable::new(self.dim, vectors, self.aggregation.source_tag())
            .map_err(|e| ManifoldError::Format(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(FEATURE_TABLE_MAGIC)
            .u8(self.aggregation.code())
            .usize32(self.vector_count())
            .usize32(self.dim);
        for v in self.vectors() {
            w.u32(v.image_id).u32(v.subject_id).f64(v.classification_loss).f64s(&v.values);
        }
        w.into_inner()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let fmt = |e: DecodeError| ManifoldError::Format(e.to_string());
        let mut r = ByteReader::new(buf);
        r.expect_magic(FEATURE_TABLE_MAGIC).map_err(fmt)?;
        let code = r.u8().map_err(fmt)?;
        let aggregation =
            Aggregation::from_code(code).ok_or_else(|| fmt(r.err(format!("unknown aggregation code {code}"))))?;
        let count = r.usize32().map_err(fmt)?;
        let dim = r.usize32().map_err(fmt)?;
        let record = 16 + 8 * dim;
        if count.checked_mul(record) != Some(r.remaining()) {
            return Err(fmt(r.err(format!(
                "{} bytes left for {count} records of {record} bytes",
                r.remaining()
            ))));
        }
        let mut vectors = Vec::with_capacity(count);
        for _ in 0..count {
            let image_id = r.u32().map_err(fmt)?;
            let subject_id = r.u32().map_err(fmt)?;
            let classification_loss = r.f64().map_err(fmt)?;
            let values = r.f64s(dim).map_err(fmt)?;
            vectors.push(EegFeatureVector {
                image_id,
                subject_id,
                values,
                classification_loss,
            });
        }
        Self::new(dim, aggregation, vectors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| ManifoldError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|source| ManifoldError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&buf)
    }
}

/// Encodes every sequence and records the head's loss on the result against
/// the sequence's class. Sequences must already be preprocessed and windowed
/// like the training data.
pub fn extract_features(model: &EncoderModel, dataset: &Dataset) -> Result<FeatureTable> {
    let vectors = dataset
        .sequences()
        .par_iter()
        .map(|s| {
            let values = model.encode(s)?;
            let classification_loss = model.feature_loss(&values, s.class_id as usize)?;
            Ok(EegFeatureVector {
                image_id: s.image_id,
                subject_id: s.subject_id,
                values,
                classification_loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureTable::new(model.feature_dim(), Aggregation::None, vectors)
}

fn require_raw(table: &FeatureTable) -> Result<()> {
    match table.aggregation {
        Aggregation::None => Ok(()),
        a => Err(ManifoldError::AlreadyAggregated(a)),
    }
}

/// Elementwise mean over the subjects of each image. The result is clamped
/// to the inputs' envelope, which the exact mean never leaves. The recorded
/// loss is the mean of the subject losses.
pub fn aggregate_average(table: &FeatureTable) -> Result<FeatureTable> {
    require_raw(table)?;
    let mut out = Vec::with_capacity(table.len());
    for (image_id, list) in table.iter() {
        if list.is_empty() {
            return Err(ManifoldError::EmptyImage(image_id));
        }
        let n = list.len() as f64;
        let values = (0..table.dim)
            .map(|d| {
                let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
                for v in list {
                    let x = v.values[d];
                    sum += x;
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
                (sum / n).clamp(lo, hi)
            })
            .collect();
        let loss = list.iter().map(|v| v.classification_loss).sum::<f64>() / n;
        out.push(EegFeatureVector {
            image_id,
            subject_id: AVERAGED_SUBJECT,
            values,
            classification_loss: loss,
        });
    }
    FeatureTable::new(table.dim, Aggregation::Average, out)
}

/// Per image, the vector with the smallest classification loss; equal losses
/// go to the smallest subject id.
pub fn aggregate_best(table: &FeatureTable) -> Result<FeatureTable> {
    require_raw(table)?;
    let mut out = Vec::with_capacity(table.len());
    for (image_id, list) in table.iter() {
        let best = list
            .iter()
            .min_by(|a, b| {
                a.classification_loss
                    .total_cmp(&b.classification_loss)
                    .then(a.subject_id.cmp(&b.subject_id))
            })
            .ok_or(ManifoldError::EmptyImage(image_id))?;
        out.push(best.clone());
    }
    FeatureTable::new(table.dim, Aggregation::Best, out)
}

pub fn aggregate(table: &FeatureTable, how: Aggregation) -> Result<FeatureTable> {
    match how {
        Aggregation::None => {
            require_raw(table)?;
            Ok(table.clone())
        }
        Aggregation::Average => aggregate_average(table),
        Aggregation::Best => aggregate_best(table),
    }
}
