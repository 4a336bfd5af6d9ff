//! Synthetic evoked-EEG datasets with a known class structure.
//!
//! Each class owns a template of band-limited sinusoids with per-channel
//! weights. A recording is the template, perturbed per subject in amplitude
//! and phase, plus white Gaussian noise. Every random draw comes from a
//! substream keyed by what it describes (class, subject, image), so output
//! does not depend on generation order.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::eeg::{Dataset, EegSequence, ImageFeatureTable, DEFAULT_AMPLITUDE_THRESHOLD};
use crate::rng;

/// Templates live inside the band-pass passband.
pub const TEMPLATE_BAND_HZ: (f64, f64) = (15.0, 70.0);
/// Mains notch band; template components here would be filtered away.
pub const NOTCH_BAND_HZ: (f64, f64) = (49.0, 51.0);
/// Margin kept between drawn frequencies and the notch band.
const NOTCH_GUARD_HZ: f64 = 1.0;
/// `|z|` cap on subject jitter draws, which makes the amplitude bound hard.
const JITTER_CLAMP: f64 = 3.0;
/// Noise bound used by validation, in standard deviations.
const NOISE_SIGMAS: f64 = 6.0;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("class {class}: component at {frequency_hz} Hz {why}")]
    Frequency {
        class: usize,
        frequency_hz: f64,
        why: &'static str,
    },
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// How a template unfolds over the recording.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignatureMode {
    /// Sustained sinusoids from stimulus onset.
    Oscillatory,
    /// Damped sinusoids starting `onset_ms` after the stimulus.
    Transient { onset_ms: f64, decay_ms: f64 },
}

impl SignatureMode {
    /// Gain and local time of the sinusoid at `t_s` seconds.
    fn envelope(self, t_s: f64) -> Option<(f64, f64)> {
        match self {
            SignatureMode::Oscillatory => Some((1.0, t_s)),
            SignatureMode::Transient { onset_ms, decay_ms } => {
                let dt = t_s - onset_ms / 1000.0;
                (dt >= 0.0).then(|| ((-dt * 1000.0 / decay_ms).exp(), dt))
            }
        }
    }
}

impl fmt::Display for SignatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignatureMode::Oscillatory => f.write_str("oscillatory"),
            SignatureMode::Transient { onset_ms, decay_ms } => {
                write!(f, "transient(onset_ms={onset_ms},decay_ms={decay_ms})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub frequency_hz: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// Per-channel gain, max |w| = 1.
    pub channel_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTemplate {
    pub components: Vec<Component>,
}

/// Per-subject multiplicative amplitude and additive phase offsets, one pair
/// per template component.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectJitter {
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
}

impl ClassTemplate {
    /// Channel-major noiseless signal of `samples` samples.
    pub fn render(&self, channels: usize, sample_rate_hz: f64, samples: usize, mode: SignatureMode) -> Vec<f64> {
        self.render_jittered(channels, sample_rate_hz, samples, mode, None)
    }

    fn render_jittered(
        &self,
        channels: usize,
        sample_rate_hz: f64,
        samples: usize,
        mode: SignatureMode,
        jitter: Option<&SubjectJitter>,
    ) -> Vec<f64> {
        let mut out = vec![0.0; channels * samples];
        for (k, comp) in self.components.iter().enumerate() {
            let (gain, shift) = jitter.map_or((1.0, 0.0), |j| (j.amplitude[k], j.phase[k]));
            let wave: Vec<f64> = (0..samples)
                .map(|t| {
                    let t_s = t as f64 / sample_rate_hz;
                    mode.envelope(t_s).map_or(0.0, |(env, local)| {
                        env * (2.0 * PI * comp.frequency_hz * local + comp.phase + shift).sin()
                    })
                })
                .collect();
            for (c, w) in comp.channel_weights.iter().enumerate().take(channels) {
                let a = comp.amplitude * gain * w;
                for (o, v) in out[c * samples..(c + 1) * samples].iter_mut().zip(&wave) {
                    *o += a * v;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub class_count: usize,
    pub images_per_class: usize,
    pub subject_count: usize,
    pub channel_count: usize,
    pub sample_rate_hz: f64,
    pub duration_ms: f64,
    pub components_per_class: usize,
    /// Component amplitudes are drawn in `[amplitude / 2, amplitude]`.
    pub amplitude: f64,
    pub noise_sigma: f64,
    /// Scale of the per-subject amplitude (relative) and phase (radians) offsets.
    pub subject_jitter: f64,
    pub mode: SignatureMode,
    /// Per-image perturbation of the synthetic image features.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            class_count: 8,
            images_per_class: 20,
            subject_count: 3,
            channel_count: 8,
            sample_rate_hz: 250.0,
            duration_ms: 500.0,
            components_per_class: 2,
            amplitude: 10.0,
            noise_sigma: 10.0,
            subject_jitter: 0.1,
            mode: SignatureMode::Oscillatory,
            feature_noise: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn image_count(&self) -> usize {
        self.class_count * self.images_per_class
    }

    pub fn sequence_count(&self) -> usize {
        self.image_count() * self.subject_count
    }

    pub fn samples_per_sequence(&self) -> usize {
        (self.duration_ms * self.sample_rate_hz / 1000.0).round() as usize
    }

    pub fn class_of(&self, image_id: u32) -> u32 {
        image_id / self.images_per_class as u32
    }

    /// Worst-case peak of a jittered template on one channel.
    pub fn signal_bound(&self) -> f64 {
        self.components_per_class as f64 * self.amplitude * (1.0 + JITTER_CLAMP * self.subject_jitter)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.class_count == 0 || self.images_per_class == 0 || self.subject_count == 0 || self.channel_count == 0 {
            return bad("class, image, subject and channel counts must be positive".into());
        }
        if self.components_per_class == 0 {
            return bad("each class needs at least one component".into());
        }
        if !(self.sample_rate_hz > 2.0 * TEMPLATE_BAND_HZ.1) || !self.sample_rate_hz.is_finite() {
            return bad(format!(
                "sample rate {} Hz cannot represent {} Hz templates",
                self.sample_rate_hz, TEMPLATE_BAND_HZ.1
            ));
        }
        if self.samples_per_sequence() == 0 {
            return bad(format!("duration {} ms holds no samples", self.duration_ms));
        }
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("noise_sigma", self.noise_sigma),
            ("subject_jitter", self.subject_jitter),
            ("feature_noise", self.feature_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if JITTER_CLAMP * self.subject_jitter >= 1.0 {
            return bad(format!("subject_jitter {} can flip amplitudes", self.subject_jitter));
        }
        if let SignatureMode::Transient { onset_ms, decay_ms } = self.mode {
            if !(onset_ms >= 0.0 && onset_ms < self.duration_ms && decay_ms > 0.0) {
                return bad(format!("transient onset {onset_ms} ms / decay {decay_ms} ms"));
            }
        }
        let peak = self.signal_bound() + NOISE_SIGMAS * self.noise_sigma;
        if peak > DEFAULT_AMPLITUDE_THRESHOLD {
            return bad(format!(
                "signal bound {peak} exceeds the amplitude threshold {DEFAULT_AMPLITUDE_THRESHOLD}"
            ));
        }
        Ok(())
    }

    /// Rejects components outside the template band or inside the notch band.
    pub fn validate_templates(&self, templates: &[ClassTemplate]) -> Result<()> {
        if templates.len() != self.class_count {
            return Err(SynthError::Spec(format!(
                "{} templates for {} classes",
                templates.len(),
                self.class_count
            )));
        }
        for (class, t) in templates.iter().enumerate() {
            for c in &t.components {
                let f = c.frequency_hz;
                if !(TEMPLATE_BAND_HZ.0..=TEMPLATE_BAND_HZ.1).contains(&f) {
                    return Err(SynthError::Frequency {
                        class,
                        frequency_hz: f,
                        why: "is outside the 15-70 Hz template band",
                    });
                }
                if (NOTCH_BAND_HZ.0..=NOTCH_BAND_HZ.1).contains(&f) {
                    return Err(SynthError::Frequency {
                        class,
                        frequency_hz: f,
                        why: "falls in the 49-51 Hz notch band",
                    });
                }
                if c.channel_weights.len() != self.channel_count {
                    return Err(SynthError::Spec(format!(
                        "class {class}: {} channel weights for {} channels",
                        c.channel_weights.len(),
                        self.channel_count
                    )));
                }
                if !(c.amplitude >= 0.0) || c.channel_weights.iter().any(|w| !w.is_finite()) {
                    return Err(SynthError::Spec(format!("class {class}: invalid amplitude or weights")));
                }
            }
        }
        Ok(())
    }

    /// Seeded class templates.
    pub fn templates(&self) -> Vec<ClassTemplate> {
        (0..self.class_count)
            .map(|class| {
                let mut rng = rng::stream(self.seed, &[0x7e3, class as u64]);
                let components = (0..self.components_per_class)
                    .map(|_| {
                        let frequency_hz = loop {
                            let f = rng.random_range(TEMPLATE_BAND_HZ.0..TEMPLATE_BAND_HZ.1);
                            if !(NOTCH_BAND_HZ.0 - NOTCH_GUARD_HZ..=NOTCH_BAND_HZ.1 + NOTCH_GUARD_HZ).contains(&f) {
                                break f;
                            }
                        };
                        let amplitude = self.amplitude * rng.random_range(0.5..=1.0);
                        let phase = rng.random_range(0.0..2.0 * PI);
                        let mut w: Vec<f64> = (0..self.channel_count).map(|_| rng.random_range(-1.0..1.0)).collect();
                        let peak = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                        if peak > 0.0 {
                            w.iter_mut().for_each(|v| *v /= peak);
                        }
                        Component {
                            frequency_hz,
                            amplitude,
                            phase,
                            channel_weights: w,
                        }
                    })
                    .collect();
                ClassTemplate { components }
            })
            .collect()
    }

    /// Seeded offsets of one subject for one class.
    pub fn subject_jitter(&self, subject: u32, class: u32) -> SubjectJitter {
        let mut rng = rng::stream(self.seed, &[0x5ab, subject as u64, class as u64]);
        let mut draw = || {
            let z: f64 = rng.sample(StandardNormal);
            self.subject_jitter * z.clamp(-JITTER_CLAMP, JITTER_CLAMP)
        };
        let mut amplitude = Vec::with_capacity(self.components_per_class);
        let mut phase = Vec::with_capacity(self.components_per_class);
        for _ in 0..self.components_per_class {
            amplitude.push(1.0 + draw());
            phase.push(PI * draw());
        }
        SubjectJitter { amplitude, phase }
    }
}

/// What generated a dataset, for the sidecar file and for tests.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    pub templates: Vec<ClassTemplate>,
}

impl GroundTruth {
    /// Noiseless, jitter-free channel-major signature of a class.
    pub fn signature(&self, class: u32) -> Vec<f64> {
        let s = &self.spec;
        self.templates[class as usize].render(s.channel_count, s.sample_rate_hz, s.samples_per_sequence(), s.mode)
    }

    /// Line-oriented description of the spec and every template component.
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "# synthetic ground truth");
        for (k, v) in [
            ("seed", s.seed.to_string()),
            ("class_count", s.class_count.to_string()),
            ("images_per_class", s.images_per_class.to_string()),
            ("subject_count", s.subject_count.to_string()),
            ("channel_count", s.channel_count.to_string()),
            ("sample_rate_hz", s.sample_rate_hz.to_string()),
            ("duration_ms", s.duration_ms.to_string()),
            ("amplitude", s.amplitude.to_string()),
            ("noise_sigma", s.noise_sigma.to_string()),
            ("subject_jitter", s.subject_jitter.to_string()),
            ("feature_noise", s.feature_noise.to_string()),
            ("mode", s.mode.to_string()),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "# class, component, frequency_hz, amplitude, phase, channel_weights");
        for (class, t) in self.templates.iter().enumerate() {
            for (k, c) in t.components.iter().enumerate() {
                let w: Vec<String> = c.channel_weights.iter().map(f64::to_string).collect();
                let _ = writeln!(
                    out,
                    "{class}, {k}, {}, {}, {}, {}",
                    c.frequency_hz,
                    c.amplitude,
                    c.phase,
                    w.join(" ")
                );
            }
        }
        out
    }
}

/// One recording per (subject, image).
pub fn generate_dataset(spec: &SynthSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let templates = spec.templates();
    generate_with_templates(spec, templates)
}

/// As [`generate_dataset`] with caller-supplied templates.
pub fn generate_with_templates(spec: &SynthSpec, templates: Vec<ClassTemplate>) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    spec.validate_templates(&templates)?;
    let len = spec.samples_per_sequence();
    let keys: Vec<(u32, u32)> = (0..spec.subject_count as u32)
        .flat_map(|s| (0..spec.image_count() as u32).map(move |i| (s, i)))
        .collect();
    let sequences: Vec<EegSequence> = keys
        .par_iter()
        .map(|&(subject, image)| {
            let class = spec.class_of(image);
            let jitter = spec.subject_jitter(subject, class);
            let mut samples = templates[class as usize].render_jittered(
                spec.channel_count,
                spec.sample_rate_hz,
                len,
                spec.mode,
                Some(&jitter),
            );
            if spec.noise_sigma > 0.0 {
                let mut rng = rng::stream(spec.seed, &[0x5e9, subject as u64, image as u64]);
                for v in &mut samples {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += spec.noise_sigma * z;
                }
            }
            EegSequence::new(subject, image, class, spec.sample_rate_hz, spec.channel_count, samples)
                .expect("generated shape is valid")
        })
        .collect();
    let dataset = Dataset::new(sequences, spec.class_count, spec.subject_count)
        .map_err(|e| SynthError::Spec(e.to_string()))?;
    Ok((
        dataset,
        GroundTruth {
            spec: spec.clone(),
            templates,
        },
    ))
}

/// Seeded standard-normal embedding of every class.
pub fn class_embeddings(spec: &SynthSpec, dim: usize) -> Vec<Vec<f64>> {
    (0..spec.class_count)
        .map(|class| {
            let mut rng = rng::stream(spec.seed, &[0x1e6, class as u64]);
            (0..dim).map(|_| rng.sample(StandardNormal)).collect()
        })
        .collect()
}

/// Image feature = class embedding + `feature_noise` Gaussian perturbation.
pub fn generate_image_features(spec: &SynthSpec, dim: usize) -> Result<ImageFeatureTable> {
    spec.validate()?;
    if dim == 0 {
        return Err(SynthError::Spec("feature dimension must be positive".into()));
    }
    let embeddings = class_embeddings(spec, dim);
    let vectors: BTreeMap<u32, Vec<f64>> = (0..spec.image_count() as u32)
        .map(|image| {
            let base = &embeddings[spec.class_of(image) as usize];
            let mut rng = rng::stream(spec.seed, &[0x1f7, image as u64]);
            let v = base
                .iter()
                .map(|b| {
                    let z: f64 = rng.sample(StandardNormal);
                    b + spec.feature_noise * z
                })
                .collect();
            (image, v)
        })
        .collect();
    ImageFeatureTable::new(dim, vectors, "synthetic").map_err(|e| SynthError::Spec(e.to_string()))
}
