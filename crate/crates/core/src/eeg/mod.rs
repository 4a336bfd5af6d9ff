//! Dataset model: recordings, image metadata, validation and image-level splits.

mod io;
mod split;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use io::{
    read_eeg_csv, read_eeg_file, read_image_features, write_eeg_csv, write_eeg_file,
    write_image_features, EegFileHeader, EEG_MAGIC, IMAGE_FEATURE_MAGIC,
};
pub use split::{split_dataset, Split, SplitAssignment};

pub const DEFAULT_CHANNELS: usize = 29;
pub const DEFAULT_CLASSES: usize = 40;
pub const DEFAULT_SUBJECTS: usize = 7;
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 250.0;
/// Shortest raw per-image recording accepted by the loader.
pub const MIN_RAW_SAMPLES: usize = 120;
pub const DEFAULT_AMPLITUDE_THRESHOLD: f64 = 100.0;

#[derive(Debug, Error)]
pub enum EegError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed header: {msg}")]
    Header { path: PathBuf, msg: String },
    #[error("{path}: record {record}: {msg}")]
    Record {
        path: PathBuf,
        record: usize,
        msg: String,
    },
    #[error("{path}: dimension mismatch: {msg}")]
    Dimension { path: PathBuf, msg: String },
    #[error("{path}: record {record}: unknown class id {class_id} (class count {class_count})")]
    UnknownClass {
        path: PathBuf,
        record: usize,
        class_id: u32,
        class_count: usize,
    },
    #[error("{path}: no records")]
    NoRecords { path: PathBuf },
    #[error("{path}: no valid records ({dropped} dropped)")]
    NoValidRecords { path: PathBuf, dropped: usize },
    #[error("invalid sequence: {0}")]
    Sequence(String),
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("invalid split fractions: {0}")]
    Fractions(String),
    #[error("class too small to stratify: class {class_id} has {images} images, need at least {needed}")]
    ClassTooSmall {
        class_id: u32,
        images: usize,
        needed: usize,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid feature table: {0}")]
    Features(String),
}

pub type Result<T, E = EegError> = std::result::Result<T, E>;

/// One multi-channel recording for a (subject, image) pair, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EegSequence {
    pub subject_id: u32,
    pub image_id: u32,
    pub class_id: u32,
    pub sample_rate_hz: f64,
    channels: usize,
    samples: Vec<f64>,
}

impl EegSequence {
    pub fn new(
        subject_id: u32,
        image_id: u32,
        class_id: u32,
        sample_rate_hz: f64,
        channels: usize,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || samples.is_empty() || !samples.len().is_multiple_of(channels) {
            return Err(EegError::Sequence(format!(
                "{} samples do not divide into {} channels",
                samples.len(),
                channels
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(EegError::Sequence(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Self {
            subject_id,
            image_id,
            class_id,
            sample_rate_hz,
            channels,
            samples,
        })
    }

    /// Builds a sequence from per-channel rows of equal length.
    pub fn from_channels(
        subject_id: u32,
        image_id: u32,
        class_id: u32,
        sample_rate_hz: f64,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(EegError::Sequence("channel rows differ in length".into()));
        }
        let samples = rows.iter().flatten().copied().collect();
        Self::new(
            subject_id,
            image_id,
            class_id,
            sample_rate_hz,
            rows.len(),
            samples,
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of time samples per channel.
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let t = self.len();
        &self.samples[c * t..(c + 1) * t]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let t = self.len();
        &mut self.samples[c * t..(c + 1) * t]
    }

    pub fn sample(&self, c: usize, t: usize) -> f64 {
        self.samples[c * self.len() + t]
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Same metadata with new channel-major samples of the given length.
    pub fn with_samples(&self, len: usize, samples: Vec<f64>) -> Self {
        debug_assert_eq!(samples.len(), len * self.channels);
        Self {
            samples,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            subject_id: self.subject_id,
            image_id: self.image_id,
            class_id: self.class_id,
            sample_rate_hz: self.sample_rate_hz,
            channels: self.channels,
            samples: Vec::new(),
        }
    }

    pub fn key(&self) -> (u32, u32) {
        (self.subject_id, self.image_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRules {
    pub channel_count: usize,
    /// Peak absolute amplitude allowed on any channel.
    pub amplitude_threshold: f64,
}

impl Default for ValidationRules {
    fn default() -> Self {
        Self {
            channel_count: DEFAULT_CHANNELS,
            amplitude_threshold: DEFAULT_AMPLITUDE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    NonFinite,
    Amplitude { channel: usize },
    ChannelCount { found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

pub fn validate_sequence(seq: &EegSequence, rules: &ValidationRules) -> Verdict {
    if seq.channels() != rules.channel_count {
        return Verdict::Reject(RejectReason::ChannelCount {
            found: seq.channels(),
        });
    }
    if seq.samples().iter().any(|v| !v.is_finite()) {
        return Verdict::Reject(RejectReason::NonFinite);
    }
    for c in 0..seq.channels() {
        let peak = seq.channel(c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > rules.amplitude_threshold {
            return Verdict::Reject(RejectReason::Amplitude { channel: c });
        }
    }
    Verdict::Accept
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageInfo {
    pub class_id: u32,
    pub features: Option<Vec<f64>>,
}

/// Per-image feature vectors of one fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatureTable {
    dim: usize,
    vectors: BTreeMap<u32, Vec<f64>>,
    pub source_tag: String,
}

impl ImageFeatureTable {
    pub fn new(
        dim: usize,
        vectors: BTreeMap<u32, Vec<f64>>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(EegError::Features("dimension must be positive".into()));
        }
        for (id, v) in &vectors {
            if v.len() != dim {
                return Err(EegError::Features(format!(
                    "image {id}: dimension {} != {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EegError::Features(format!("image {id}: non-finite value")));
            }
        }
        Ok(Self {
            dim,
            vectors,
            source_tag: source_tag.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, image_id: u32) -> Option<&[f64]> {
        self.vectors.get(&image_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.vectors.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn image_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.vectors.keys().copied()
    }

    /// Keeps only the listed images.
    pub fn restrict(&self, keep: impl Fn(u32) -> bool) -> Self {
        Self {
            dim: self.dim,
            vectors: self
                .vectors
                .iter()
                .filter(|(k, _)| keep(**k))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
            source_tag: self.source_tag.clone(),
        }
    }
}

/// Validated set of sequences plus per-image metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sequences: Vec<EegSequence>,
    images: BTreeMap<u32, ImageInfo>,
    pub class_count: usize,
    pub subject_count: usize,
}

impl Dataset {
    /// Builds a dataset from sequences, canonicalizing their order by
    /// (subject_id, image_id).
    pub fn new(
        mut sequences: Vec<EegSequence>,
        class_count: usize,
        subject_count: usize,
    ) -> Result<Self> {
        sequences.sort_by_key(EegSequence::key);
        let mut images: BTreeMap<u32, ImageInfo> = BTreeMap::new();
        let mut per_image: BTreeMap<u32, usize> = BTreeMap::new();
        for w in sequences.windows(2) {
            if w[0].key() == w[1].key() {
                return Err(EegError::Inconsistent(format!(
                    "duplicate recording for subject {} image {}",
                    w[0].subject_id, w[0].image_id
                )));
            }
        }
        for s in &sequences {
            if s.class_id as usize >= class_count {
                return Err(EegError::Inconsistent(format!(
                    "image {}: class id {} outside 0..{class_count}",
                    s.image_id, s.class_id
                )));
            }
            let info = images.entry(s.image_id).or_insert(ImageInfo {
                class_id: s.class_id,
                features: None,
            });
            if info.class_id != s.class_id {
                return Err(EegError::Inconsistent(format!(
                    "image {} labelled with classes {} and {}",
                    s.image_id, info.class_id, s.class_id
                )));
            }
            let n = per_image.entry(s.image_id).or_default();
            *n += 1;
            if *n > subject_count {
                return Err(EegError::Inconsistent(format!(
                    "image {} has more than {subject_count} recordings",
                    s.image_id
                )));
            }
        }
        Ok(Self {
            sequences,
            images,
            class_count,
            subject_count,
        })
    }

    pub fn sequences(&self) -> &[EegSequence] {
        &self.sequences
    }

    pub fn images(&self) -> &BTreeMap<u32, ImageInfo> {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn class_of(&self, image_id: u32) -> Option<u32> {
        self.images.get(&image_id).map(|i| i.class_id)
    }

    /// Attaches image features; returns how many table entries matched a dataset image.
    pub fn attach_features(&mut self, table: &ImageFeatureTable) -> usize {
        let mut matched = 0;
        for (id, info) in self.images.iter_mut() {
            if let Some(v) = table.get(*id) {
                info.features = Some(v.to_vec());
                matched += 1;
            }
        }
        matched
    }

    /// Image features of every image that has them.
    pub fn image_features(&self, source_tag: &str) -> Option<ImageFeatureTable> {
        let vectors: BTreeMap<u32, Vec<f64>> = self
            .images
            .iter()
            .filter_map(|(id, i)| i.features.clone().map(|f| (*id, f)))
            .collect();
        let dim = vectors.values().next()?.len();
        ImageFeatureTable::new(dim, vectors, source_tag).ok()
    }

    /// Applies a per-sequence transform, keeping metadata.
    pub fn map_sequences<E>(
        &self,
        f: impl Fn(&EegSequence) -> Result<EegSequence, E> + Sync,
    ) -> Result<Self, E>
    where
        E: Send,
    {
        use rayon::prelude::*;
        let sequences = self
            .sequences
            .par_iter()
            .map(&f)
            .collect::<Result<Vec<_>, E>>()?;
        Ok(Self {
            sequences,
            images: self.images.clone(),
            class_count: self.class_count,
            subject_count: self.subject_count,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub class_count: usize,
    pub subject_count: usize,
    pub rules: ValidationRules,
    pub min_samples: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            class_count: DEFAULT_CLASSES,
            subject_count: DEFAULT_SUBJECTS,
            rules: ValidationRules::default(),
            min_samples: MIN_RAW_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub records: usize,
    pub accepted: usize,
    pub dropped: usize,
    pub dropped_non_finite: usize,
    pub dropped_amplitude: usize,
    pub dropped_channel_count: usize,
    pub feature_records: usize,
    pub features_matched: usize,
}

impl LoadReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Loads a recording file (binary or CSV, detected by magic) and an optional
/// image-feature file. Sequences failing validation are dropped and counted.
pub fn load_dataset(
    eeg_path: &Path,
    features_path: Option<&Path>,
    opts: &LoadOptions,
) -> Result<(Dataset, LoadReport)> {
    let (header, sequences) = read_eeg_file(eeg_path)?;
    if sequences.is_empty() {
        return Err(EegError::NoRecords {
            path: eeg_path.to_path_buf(),
        });
    }
    if header.channels as usize != opts.rules.channel_count {
        return Err(EegError::Dimension {
            path: eeg_path.to_path_buf(),
            msg: format!(
                "file has {} channels, expected {}",
                header.channels, opts.rules.channel_count
            ),
        });
    }
    if (header.samples_per_record as usize) < opts.min_samples {
        return Err(EegError::Dimension {
            path: eeg_path.to_path_buf(),
            msg: format!(
                "{} samples per record, need at least {}",
                header.samples_per_record, opts.min_samples
            ),
        });
    }
    let mut report = LoadReport {
        records: sequences.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(sequences.len());
    for (i, seq) in sequences.into_iter().enumerate() {
        if seq.class_id as usize >= opts.class_count {
            return Err(EegError::UnknownClass {
                path: eeg_path.to_path_buf(),
                record: i,
                class_id: seq.class_id,
                class_count: opts.class_count,
            });
        }
        match validate_sequence(&seq, &opts.rules) {
            Verdict::Accept => kept.push(seq),
            Verdict::Reject(reason) => {
                report.dropped += 1;
                match reason {
                    RejectReason::NonFinite => report.dropped_non_finite += 1,
                    RejectReason::Amplitude { .. } => report.dropped_amplitude += 1,
                    RejectReason::ChannelCount { .. } => report.dropped_channel_count += 1,
                }
            }
        }
    }
    report.accepted = kept.len();
    if kept.is_empty() {
        return Err(EegError::NoValidRecords {
            path: eeg_path.to_path_buf(),
            dropped: report.dropped,
        });
    }
    let mut dataset = Dataset::new(kept, opts.class_count, opts.subject_count)?;
    if let Some(fp) = features_path {
        let table = read_image_features(fp)?;
        report.feature_records = table.len();
        report.features_matched = dataset.attach_features(&table);
    }
    Ok((dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(channels: usize, len: usize, fill: f64) -> EegSequence {
        EegSequence::new(0, 0, 0, 250.0, channels, vec![fill; channels * len]).unwrap()
    }

    #[test]
    fn nan_sample_is_rejected() {
        let mut s = seq(29, 125, 0.0);
        s.channel_mut(3)[17] = f64::NAN;
        assert_eq!(
            validate_sequence(&s, &ValidationRules::default()),
            Verdict::Reject(RejectReason::NonFinite)
        );
    }

    #[test]
    fn zero_sequence_is_accepted() {
        assert!(validate_sequence(&seq(29, 125, 0.0), &ValidationRules::default()).is_accept());
    }

    #[test]
    fn amplitude_above_threshold_is_rejected() {
        let mut s = seq(29, 125, 0.0);
        for (t, v) in s.channel_mut(5).iter_mut().enumerate() {
            *v = 150.0 * (t as f64 * 0.3).sin();
        }
        // direct scan for the peak
        let peak = s.channel(5).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(peak > 100.0);
        assert_eq!(
            validate_sequence(&s, &ValidationRules::default()),
            Verdict::Reject(RejectReason::Amplitude { channel: 5 })
        );
        let relaxed = ValidationRules {
            amplitude_threshold: 200.0,
            ..Default::default()
        };
        assert!(validate_sequence(&s, &relaxed).is_accept());
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        assert_eq!(
            validate_sequence(&seq(28, 125, 0.0), &ValidationRules::default()),
            Verdict::Reject(RejectReason::ChannelCount { found: 28 })
        );
    }

    #[test]
    fn dataset_rejects_conflicting_labels() {
        let a = EegSequence::new(0, 5, 1, 250.0, 1, vec![0.0; 4]).unwrap();
        let b = EegSequence::new(1, 5, 2, 250.0, 1, vec![0.0; 4]).unwrap();
        assert!(matches!(
            Dataset::new(vec![a, b], 4, 7),
            Err(EegError::Inconsistent(_))
        ));
    }

    #[test]
    fn dataset_limits_recordings_per_image() {
        let seqs: Vec<_> = (0..3)
            .map(|s| EegSequence::new(s, 9, 0, 250.0, 1, vec![0.0; 4]).unwrap())
            .collect();
        assert!(Dataset::new(seqs.clone(), 1, 3).is_ok());
        assert!(Dataset::new(seqs, 1, 2).is_err());
    }

    #[test]
    fn dataset_is_canonically_ordered() {
        let seqs = vec![
            EegSequence::new(1, 0, 0, 250.0, 1, vec![0.0; 4]).unwrap(),
            EegSequence::new(0, 3, 0, 250.0, 1, vec![0.0; 4]).unwrap(),
            EegSequence::new(0, 1, 0, 250.0, 1, vec![0.0; 4]).unwrap(),
        ];
        let d = Dataset::new(seqs, 1, 7).unwrap();
        let keys: Vec<_> = d.sequences().iter().map(EegSequence::key).collect();
        assert_eq!(keys, vec![(0, 1), (0, 3), (1, 0)]);
    }
}
