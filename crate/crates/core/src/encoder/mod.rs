//! Recurrent EEG encoders with a jointly trained softmax head.
//!
//! Three layouts are supported, written in the compact notation used for
//! architecture sweeps:
//!
//! - `"128,64 common"`: stacked LSTMs fed the full channel vector per step
//! - `"5 channel, 32 common"`: one small LSTM per channel, whose concatenated
//!   states feed the common stack
//! - `"128 common, 128 output"`: common stack followed by affine + ReLU
//!
//! The feature vector is the deepest layer's output at the last time step.

mod format;
mod gradcheck;
mod lstm;
mod network;
mod precise;
mod train;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use format::{MODEL_FORMAT_VERSION, MODEL_MAGIC};
pub use gradcheck::{grad_check, CheckInstance, GradCheck};
pub use lstm::{lstm_step, LstmParams};
pub use network::{Dense, EncoderParams};
pub use train::{
    train_encoder, train_encoder_audited, train_on, EpochRecord, Sample, TrainHistory, TrainHyper,
};

use crate::eeg::{EegSequence, Split};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("channel mismatch: model expects {expected} channels, sequence has {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("window mismatch: model expects {expected} samples, sequence has {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("feature dimension mismatch: head expects {expected}, got {found}")]
    FeatureDim { expected: usize, found: usize },
    #[error("label {label} outside 0..{classes}")]
    Label { label: usize, classes: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("{0} split has no sequences")]
    EmptySplit(Split),
    #[error("sequences differ in length ({0} vs {1} samples)")]
    RaggedInput(usize, usize),
    #[error("model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EncoderError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Common,
    ChannelCommon,
    CommonOutput,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::Common,
        Architecture::ChannelCommon,
        Architecture::CommonOutput,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Architecture::Common => "common",
            Architecture::ChannelCommon => "channel_common",
            Architecture::CommonOutput => "common_output",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Architecture::Common => 0,
            Architecture::ChannelCommon => 1,
            Architecture::CommonOutput => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.code() == code)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.tag() == s.trim())
            .ok_or_else(|| EncoderError::Config(format!("unknown architecture {s:?}")))
    }
}

/// Layer sizes of one encoder.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncoderLayout {
    /// Hidden size of each per-channel LSTM.
    pub channel_hidden: Option<usize>,
    pub common: Vec<usize>,
    /// Width of the affine + ReLU output layer.
    pub output: Option<usize>,
}

impl EncoderLayout {
    pub fn common(sizes: &[usize]) -> Self {
        Self {
            channel_hidden: None,
            common: sizes.to_vec(),
            output: None,
        }
    }

    pub fn channel_common(channel_hidden: usize, common: &[usize]) -> Self {
        Self {
            channel_hidden: Some(channel_hidden),
            common: common.to_vec(),
            output: None,
        }
    }

    pub fn common_output(common: &[usize], output: usize) -> Self {
        Self {
            channel_hidden: None,
            common: common.to_vec(),
            output: Some(output),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match (self.channel_hidden, self.output) {
            (Some(_), _) => Architecture::ChannelCommon,
            (None, Some(_)) => Architecture::CommonOutput,
            (None, None) => Architecture::Common,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.output
            .unwrap_or_else(|| self.common.last().copied().unwrap_or(0))
    }

    fn check(&self) -> Result<()> {
        if self.common.is_empty() {
            return Err(EncoderError::Config("at least one common layer is required".into()));
        }
        if self.channel_hidden.is_some() && self.output.is_some() {
            return Err(EncoderError::Config(
                "channel and output layers cannot be combined".into(),
            ));
        }
        let sizes = self.common.iter().chain(&self.channel_hidden).chain(&self.output);
        if sizes.into_iter().any(|s| *s == 0) {
            return Err(EncoderError::Config("layer sizes must be positive".into()));
        }
        Ok(())
    }
}

impl fmt::Display for EncoderLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(c) = self.channel_hidden {
            write!(f, "{c} channel, ")?;
        }
        let common: Vec<String> = self.common.iter().map(usize::to_string).collect();
        write!(f, "{} common", common.join(","))?;
        if let Some(o) = self.output {
            write!(f, ", {o} output")?;
        }
        Ok(())
    }
}

impl FromStr for EncoderLayout {
    type Err = EncoderError;

    /// Parses `"128,64 common"`, `"5 channel, 32 common"`,
    /// `"128 common, 128 output"`. Bare numbers attach to the next named
    /// layer kind.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || EncoderError::Config(format!("cannot parse encoder layout {s:?}"));
        let mut pending = Vec::new();
        let mut channel = Vec::new();
        let mut common = Vec::new();
        let mut output = Vec::new();
        for piece in s.split(',') {
            let mut words = piece.split_whitespace();
            let n: usize = words.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            pending.push(n);
            match words.next() {
                None => continue,
                Some("channel") => channel.append(&mut pending),
                Some("common") => common.append(&mut pending),
                Some("output") => output.append(&mut pending),
                Some(_) => return Err(bad()),
            }
            if words.next().is_some() {
                return Err(bad());
            }
        }
        if !pending.is_empty() || channel.len() > 1 || output.len() > 1 {
            return Err(bad());
        }
        let layout = Self {
            channel_hidden: channel.first().copied(),
            common,
            output: output.first().copied(),
        };
        layout.check()?;
        Ok(layout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub layout: EncoderLayout,
    pub channel_count: usize,
    pub class_count: usize,
    /// Standardize each channel over the window before encoding.
    pub normalize: bool,
    pub forget_bias: f64,
}

impl EncoderConfig {
    pub fn new(layout: EncoderLayout, channel_count: usize, class_count: usize) -> Self {
        Self {
            layout,
            channel_count,
            class_count,
            normalize: true,
            forget_bias: 1.0,
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.layout.architecture()
    }

    pub fn feature_dim(&self) -> usize {
        self.layout.feature_dim()
    }

    pub fn check(&self) -> Result<()> {
        self.layout.check()?;
        if self.channel_count == 0 || self.class_count == 0 {
            return Err(EncoderError::Config(
                "channel and class counts must be positive".into(),
            ));
        }
        if !self.forget_bias.is_finite() {
            return Err(EncoderError::Config("forget bias must be finite".into()));
        }
        Ok(())
    }
}

/// Trained (or freshly initialized) encoder plus softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub params: EncoderParams,
    /// Samples per sequence the model was trained on; 0 accepts any length.
    pub input_len: usize,
}

impl EncoderModel {
    /// Random initialization from a seeded stream.
    pub fn init(config: EncoderConfig, input_len: usize, seed: u64) -> Result<Self> {
        config.check()?;
        let params = EncoderParams::init(&config, seed);
        Ok(Self {
            config,
            params,
            input_len,
        })
    }

    /// Every parameter zero.
    pub fn zeros(config: EncoderConfig, input_len: usize) -> Result<Self> {
        config.check()?;
        let params = EncoderParams::zeros(&config);
        Ok(Self {
            config,
            params,
            input_len,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    /// Time-major network input, standardized per channel when configured.
    pub fn prepare(&self, seq: &EegSequence) -> Result<Vec<Vec<f64>>> {
        if seq.channels() != self.config.channel_count {
            return Err(EncoderError::ChannelMismatch {
                expected: self.config.channel_count,
                found: seq.channels(),
            });
        }
        if self.input_len != 0 && seq.len() != self.input_len {
            return Err(EncoderError::LengthMismatch {
                expected: self.input_len,
                found: seq.len(),
            });
        }
        Ok(prepare_input(seq, self.config.normalize))
    }

    pub fn encode(&self, seq: &EegSequence) -> Result<Vec<f64>> {
        let input = self.prepare(seq)?;
        Ok(self.params.features(&self.config, &input))
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_dim() {
            return Err(EncoderError::FeatureDim {
                expected: self.feature_dim(),
                found: features.len(),
            });
        }
        Ok(self.params.head.apply(features))
    }

    pub fn classify_features(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(features)?))
    }

    /// Cross-entropy of the head on a feature vector, from logits.
    pub fn feature_loss(&self, features: &[f64], label: usize) -> Result<f64> {
        let logits = self.logits(features)?;
        if label >= logits.len() {
            return Err(EncoderError::Label {
                label,
                classes: logits.len(),
            });
        }
        Ok(cross_entropy_from_logits(&logits, label))
    }
}

/// Per-sequence input: one vector per time step.
pub fn prepare_input(seq: &EegSequence, normalize: bool) -> Vec<Vec<f64>> {
    let t = seq.len();
    let channels = seq.channels();
    let mut rows: Vec<Vec<f64>> = (0..channels).map(|c| seq.channel(c).to_vec()).collect();
    if normalize {
        for row in rows.iter_mut() {
            let mean = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
            let sd = var.sqrt();
            let scale = if sd > 1e-12 { 1.0 / sd } else { 0.0 };
            for v in row.iter_mut() {
                *v = (*v - mean) * scale;
            }
        }
    }
    (0..t).map(|k| rows.iter().map(|r| r[k]).collect()).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| (z - lse).exp()).collect()
}

pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

/// `-ln p[label]` of a probability vector.
pub fn loss_crossentropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].ln()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn encode(model: &EncoderModel, seq: &EegSequence) -> Result<Vec<f64>> {
    model.encode(seq)
}

pub fn classify_features(model: &EncoderModel, features: &[f64]) -> Result<Vec<f64>> {
    model.classify_features(features)
}
