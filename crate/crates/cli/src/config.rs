//! Experiment configuration files.
//!
//! Line-oriented `key = value` with dotted sections; `#` starts a comment.
//! Unknown keys are rejected. List values use `,` except where items contain
//! commas themselves (`encoder.layouts`, `regressors`), which use `;`.
//!
//! ```text
//! schema = 1
//! data.source = synthetic
//! synth.noise_sigma = 5
//! encoder.architectures = common, common_output
//! encoder.hidden = 32
//! windows = 40-480, 320-480
//! regressors = knn:k=5; ridge:lambda=1
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use brainfold_core::dsp::PreprocessSpec;
use brainfold_core::eeg::{LoadOptions, ValidationRules};
use brainfold_core::encoder::{Architecture, EncoderLayout};
use brainfold_core::manifold::Aggregation;
use brainfold_core::pipeline::{DataSource, ExperimentConfig};
use brainfold_core::regress::RegressorSpec;
use brainfold_core::synth::{SignatureMode, SynthSpec};
use sha2::{Digest, Sha256};

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key {key}")]
    Duplicate { line: usize, key: String },
    #[error("unknown key {0}")]
    Unknown(String),
    #[error("{key}: {msg}")]
    Value { key: String, msg: String },
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Raw key/value pairs in file order of first appearance.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if raw.values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    line: i + 1,
                    key: k.to_string(),
                });
            }
        }
        Ok(raw)
    }

    /// Applies a `key=value` override; later overrides win.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.values.insert(k.trim().to_string(), v.trim().to_string());
        Ok(())
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .remove(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::Value {
                    key: key.to_string(),
                    msg: format!("{v:?}: {e}"),
                })
            })
            .transpose()
    }

    fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn take_list<T: FromStr>(&mut self, key: &str, sep: char) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.values.remove(key) else {
            return Ok(None);
        };
        let items = v
            .split(sep)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>().map_err(|e| ConfigError::Value {
                    key: key.to_string(),
                    msg: format!("{s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(ConfigError::Value {
                key: key.to_string(),
                msg: "empty list".into(),
            });
        }
        Ok(Some(items))
    }

    fn finish(self) -> Result<()> {
        match self.values.into_keys().next() {
            Some(k) => Err(ConfigError::Unknown(k)),
            None => Ok(()),
        }
    }
}

fn value_err(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// `LO-HI` in Hz, or `off`.
pub fn parse_band(v: &str) -> std::result::Result<Option<(f64, f64)>, String> {
    let v = v.trim();
    if v == "off" {
        return Ok(None);
    }
    let (a, b) = v.split_once('-').ok_or_else(|| format!("expected LO-HI or off, got {v:?}"))?;
    let p = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("bad frequency {s:?}"));
    Ok(Some((p(a)?, p(b)?)))
}

fn band(raw: &mut RawConfig, key: &str, default: Option<(f64, f64)>) -> Result<Option<(f64, f64)>> {
    match raw.values.remove(key) {
        None => Ok(default),
        Some(v) => parse_band(&v).map_err(|m| value_err(key, m)),
    }
}

/// Synthetic recordings follow the experiment seed too.
fn seed_data(e: &mut ExperimentConfig) {
    if let DataSource::Synthetic { spec, .. } = &mut e.data {
        spec.seed = e.seed;
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub experiment: ExperimentConfig,
    pub output_root: PathBuf,
}

impl PipelineConfig {
    /// Parses a config document; every key has a default.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        for o in overrides {
            raw.set(o)?;
        }
        Self::from_raw(raw)
    }

    fn from_raw(mut raw: RawConfig) -> Result<Self> {
        let schema: u32 = raw.take_or("schema", CONFIG_SCHEMA)?;
        if schema != CONFIG_SCHEMA {
            return Err(value_err("schema", format!("unsupported schema {schema}")));
        }
        let d = ExperimentConfig::default();
        let source: String = raw.take_or("data.source", "synthetic".to_string())?;
        let data = match source.as_str() {
            "synthetic" => {
                let s = SynthSpec::default();
                let mode: String = raw.take_or("synth.mode", "oscillatory".to_string())?;
                let onset: f64 = raw.take_or("synth.onset_ms", 320.0)?;
                let decay: f64 = raw.take_or("synth.decay_ms", 150.0)?;
                let mode = match mode.as_str() {
                    "oscillatory" => SignatureMode::Oscillatory,
                    "transient" => SignatureMode::Transient {
                        onset_ms: onset,
                        decay_ms: decay,
                    },
                    other => return Err(value_err("synth.mode", format!("unknown mode {other:?}"))),
                };
                let spec = SynthSpec {
                    class_count: raw.take_or("synth.classes", s.class_count)?,
                    images_per_class: raw.take_or("synth.images_per_class", s.images_per_class)?,
                    subject_count: raw.take_or("synth.subjects", s.subject_count)?,
                    channel_count: raw.take_or("synth.channels", s.channel_count)?,
                    sample_rate_hz: raw.take_or("synth.sample_rate_hz", s.sample_rate_hz)?,
                    duration_ms: raw.take_or("synth.duration_ms", s.duration_ms)?,
                    components_per_class: raw.take_or("synth.components", s.components_per_class)?,
                    amplitude: raw.take_or("synth.amplitude", s.amplitude)?,
                    noise_sigma: raw.take_or("synth.noise_sigma", s.noise_sigma)?,
                    subject_jitter: raw.take_or("synth.subject_jitter", s.subject_jitter)?,
                    mode,
                    feature_noise: raw.take_or("synth.feature_noise", s.feature_noise)?,
                    seed: 0,
                };
                let image_feature_dim = raw.take_or("synth.feature_dim", 64usize)?;
                spec.validate().map_err(|e| value_err("synth", e.to_string()))?;
                DataSource::Synthetic {
                    spec,
                    image_feature_dim,
                }
            }
            "files" => {
                let eeg: PathBuf = raw.take("data.eeg")?.ok_or_else(|| value_err("data.eeg", "required with data.source = files"))?;
                let image_features: Option<PathBuf> = raw.take("data.image_features")?;
                let l = LoadOptions::default();
                let load = LoadOptions {
                    class_count: raw.take_or("data.classes", l.class_count)?,
                    subject_count: raw.take_or("data.subjects", l.subject_count)?,
                    rules: ValidationRules {
                        channel_count: raw.take_or("data.channels", l.rules.channel_count)?,
                        amplitude_threshold: raw.take_or("data.amplitude_threshold", l.rules.amplitude_threshold)?,
                    },
                    min_samples: raw.take_or("data.min_samples", l.min_samples)?,
                };
                DataSource::Files {
                    eeg,
                    image_features,
                    load,
                }
            }
            other => return Err(value_err("data.source", format!("expected synthetic or files, got {other:?}"))),
        };
        if !matches!(data, DataSource::Synthetic { .. }) {
            for k in raw.values.keys() {
                if k.starts_with("synth.") {
                    return Err(value_err(k, "only valid with data.source = synthetic"));
                }
            }
        }
        let p = PreprocessSpec::default();
        let notch = band(&mut raw, "preprocess.notch", p.notch)?;
        let bp_order: usize = raw.take_or("preprocess.bandpass_order", p.bandpass.map_or(2, |b| b.0))?;
        let bandpass = band(&mut raw, "preprocess.bandpass", p.bandpass.map(|b| (b.1, b.2)))?.map(|(lo, hi)| (bp_order, lo, hi));
        let fractions: Vec<f64> = raw.take_list("split.fractions", ',')?.unwrap_or(d.split_fractions.to_vec());
        let split_fractions: [f64; 3] = fractions
            .try_into()
            .map_err(|_| value_err("split.fractions", "expected three fractions"))?;

        let explicit: Option<Vec<EncoderLayout>> = raw.take_list("encoder.layouts", ';')?;
        let archs: Option<Vec<Architecture>> = raw.take_list("encoder.architectures", ',')?;
        let hidden: Option<Vec<usize>> = raw.take_list("encoder.hidden", ',')?;
        let channel_hidden: Option<usize> = raw.take("encoder.channel_hidden")?;
        let output: Option<usize> = raw.take("encoder.output")?;
        let encoders = match explicit {
            Some(l) => {
                if archs.is_some() || hidden.is_some() || channel_hidden.is_some() || output.is_some() {
                    return Err(value_err(
                        "encoder.layouts",
                        "cannot be combined with encoder.architectures/hidden/channel_hidden/output",
                    ));
                }
                l
            }
            None if archs.is_none() && hidden.is_none() && channel_hidden.is_none() && output.is_none() => d.encoders.clone(),
            None => {
                let hidden = hidden.unwrap_or(vec![32]);
                archs
                    .unwrap_or(Architecture::ALL.to_vec())
                    .into_iter()
                    .map(|a| match a {
                        Architecture::Common => EncoderLayout::common(&hidden),
                        Architecture::ChannelCommon => EncoderLayout::channel_common(channel_hidden.unwrap_or(4), &hidden),
                        Architecture::CommonOutput => {
                            EncoderLayout::common_output(&hidden, output.unwrap_or(*hidden.last().unwrap()))
                        }
                    })
                    .collect()
            }
        };
        let h = d.hyper;
        let experiment = ExperimentConfig {
            data,
            preprocess: PreprocessSpec { notch, bandpass },
            split_fractions,
            encoders,
            normalize: raw.take_or("encoder.normalize", d.normalize)?,
            hyper: brainfold_core::encoder::TrainHyper {
                learning_rate: raw.take_or("train.learning_rate", h.learning_rate)?,
                momentum: raw.take_or("train.momentum", h.momentum)?,
                batch_size: raw.take_or("train.batch_size", h.batch_size)?,
                epochs: raw.take_or("train.epochs", h.epochs)?,
            },
            windows: raw.take_list("windows", ',')?.unwrap_or(d.windows.clone()),
            aggregations: raw.take_list::<Aggregation>("aggregation", ',')?.unwrap_or(d.aggregations.clone()),
            regressors: raw.take_list::<RegressorSpec>("regressors", ';')?.unwrap_or(d.regressors.clone()),
            seed: raw.take_or("seed", 0u64)?,
        };
        let output_root = raw.take_or("output.root", PathBuf::from("runs"))?;
        raw.finish()?;
        let mut experiment = experiment;
        seed_data(&mut experiment);
        if experiment.aggregations.contains(&Aggregation::None) {
            return Err(value_err("aggregation", "expected average or best"));
        }
        Ok(Self {
            experiment,
            output_root,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.experiment.seed = seed;
        seed_data(&mut self.experiment);
        self
    }

    /// Fully resolved config in a fixed key order, without the seed.
    pub fn canonical_text(&self) -> String {
        format!("{}output.root = {}\n", self.identity_text(), self.output_root.display())
    }

    /// What determines the results: everything except the seed and where
    /// outputs go.
    pub fn identity_text(&self) -> String {
        let e = &self.experiment;
        let mut kv: Vec<(&str, String)> = vec![("schema", CONFIG_SCHEMA.to_string())];
        match &e.data {
            DataSource::Synthetic {
                spec,
                image_feature_dim,
            } => {
                kv.push(("data.source", "synthetic".into()));
                kv.extend([
                    ("synth.classes", spec.class_count.to_string()),
                    ("synth.images_per_class", spec.images_per_class.to_string()),
                    ("synth.subjects", spec.subject_count.to_string()),
                    ("synth.channels", spec.channel_count.to_string()),
                    ("synth.sample_rate_hz", spec.sample_rate_hz.to_string()),
                    ("synth.duration_ms", spec.duration_ms.to_string()),
                    ("synth.components", spec.components_per_class.to_string()),
                    ("synth.amplitude", spec.amplitude.to_string()),
                    ("synth.noise_sigma", spec.noise_sigma.to_string()),
                    ("synth.subject_jitter", spec.subject_jitter.to_string()),
                    ("synth.feature_noise", spec.feature_noise.to_string()),
                    ("synth.feature_dim", image_feature_dim.to_string()),
                ]);
                match spec.mode {
                    SignatureMode::Oscillatory => kv.push(("synth.mode", "oscillatory".into())),
                    SignatureMode::Transient { onset_ms, decay_ms } => kv.extend([
                        ("synth.mode", "transient".into()),
                        ("synth.onset_ms", onset_ms.to_string()),
                        ("synth.decay_ms", decay_ms.to_string()),
                    ]),
                }
            }
            DataSource::Files {
                eeg,
                image_features,
                load,
            } => {
                kv.push(("data.source", "files".into()));
                kv.push(("data.eeg", eeg.display().to_string()));
                if let Some(f) = image_features {
                    kv.push(("data.image_features", f.display().to_string()));
                }
                kv.extend([
                    ("data.classes", load.class_count.to_string()),
                    ("data.subjects", load.subject_count.to_string()),
                    ("data.channels", load.rules.channel_count.to_string()),
                    ("data.amplitude_threshold", load.rules.amplitude_threshold.to_string()),
                    ("data.min_samples", load.min_samples.to_string()),
                ]);
            }
        }
        let band = |b: Option<(f64, f64)>| b.map_or("off".to_string(), |(lo, hi)| format!("{lo}-{hi}"));
        kv.push(("preprocess.notch", band(e.preprocess.notch)));
        kv.push(("preprocess.bandpass", band(e.preprocess.bandpass.map(|b| (b.1, b.2)))));
        if let Some((order, _, _)) = e.preprocess.bandpass {
            kv.push(("preprocess.bandpass_order", order.to_string()));
        }
        let join = |v: Vec<String>, sep: &str| v.join(sep);
        kv.push(("split.fractions", join(e.split_fractions.iter().map(f64::to_string).collect(), ", ")));
        kv.push(("encoder.layouts", join(e.encoders.iter().map(ToString::to_string).collect(), "; ")));
        kv.push(("encoder.normalize", e.normalize.to_string()));
        kv.push(("train.learning_rate", e.hyper.learning_rate.to_string()));
        kv.push(("train.momentum", e.hyper.momentum.to_string()));
        kv.push(("train.batch_size", e.hyper.batch_size.to_string()));
        kv.push(("train.epochs", e.hyper.epochs.to_string()));
        kv.push(("windows", join(e.windows.iter().map(ToString::to_string).collect(), ", ")));
        kv.push(("aggregation", join(e.aggregations.iter().map(ToString::to_string).collect(), ", ")));
        kv.push(("regressors", join(e.regressors.iter().map(ToString::to_string).collect(), "; ")));
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 12 hex digits of the SHA-256 of the identity text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.identity_text().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// `<output.root>/<hash>-s<seed>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_root.join(format!("{}-s{}", self.hash(), self.experiment.seed))
    }

    /// Every recognised key with its default, as a commented document.
    pub fn default_document() -> String {
        let mut out = String::from("# brainfold experiment configuration; every key is optional\n");
        out.push_str(&PipelineConfig::parse("", &[]).expect("defaults parse").canonical_text());
        out.push_str("seed = 0\n");
        out
    }
}
