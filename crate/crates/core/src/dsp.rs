//! IIR filter design (Butterworth band-pass, mains notch), causal filtering
//! and stimulus-locked time windows.
//!
//! Band-pass design follows the zero/pole/gain route: analog Butterworth
//! prototype poles, low-pass to band-pass transform, then the bilinear
//! transform with both edges pre-warped. The result is kept as a cascade of
//! biquads, each run in transposed direct form II with zero initial state.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use thiserror::Error;

use crate::eeg::EegSequence;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("cutoff above Nyquist: {cutoff_hz} Hz >= {nyquist_hz} Hz")]
    AboveNyquist { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
    #[error("invalid window: {0}")]
    Window(String),
}

pub type Result<T> = std::result::Result<T, DspError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Notch,
    BandpassButterworth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IirFilterSpec {
    pub kind: FilterKind,
    /// Analog prototype order; ignored for the notch.
    pub order: usize,
    pub low_cut_hz: f64,
    pub high_cut_hz: f64,
    pub sample_rate_hz: f64,
}

impl IirFilterSpec {
    pub fn bandpass(order: usize, low_cut_hz: f64, high_cut_hz: f64, sample_rate_hz: f64) -> Self {
        Self {
            kind: FilterKind::BandpassButterworth,
            order,
            low_cut_hz,
            high_cut_hz,
            sample_rate_hz,
        }
    }

    pub fn notch(low_cut_hz: f64, high_cut_hz: f64, sample_rate_hz: f64) -> Self {
        Self {
            kind: FilterKind::Notch,
            order: 2,
            low_cut_hz,
            high_cut_hz,
            sample_rate_hz,
        }
    }

    fn check(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz / 2.0;
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(DspError::InvalidSpec(format!(
                "sample rate {} must be positive",
                self.sample_rate_hz
            )));
        }
        for cutoff in [self.low_cut_hz, self.high_cut_hz] {
            if !cutoff.is_finite() {
                return Err(DspError::InvalidSpec("cutoffs must be finite".into()));
            }
            if cutoff >= nyquist {
                return Err(DspError::AboveNyquist {
                    cutoff_hz: cutoff,
                    nyquist_hz: nyquist,
                });
            }
        }
        if !(self.low_cut_hz > 0.0 && self.low_cut_hz < self.high_cut_hz) {
            return Err(DspError::InvalidSpec(format!(
                "need 0 < low ({}) < high ({})",
                self.low_cut_hz, self.high_cut_hz
            )));
        }
        if self.kind == FilterKind::BandpassButterworth && self.order == 0 {
            return Err(DspError::InvalidSpec("order must be positive".into()));
        }
        Ok(())
    }
}

/// One second-order section; `a[0]` is always 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2)
            / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }

    fn poles(&self) -> [Complex64; 2] {
        // roots of z^2 + a1 z + a2
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IirCoefficients {
    sections: Vec<Biquad>,
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

impl IirCoefficients {
    pub fn from_sections(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Expanded transfer-function numerator in powers of z^-1.
    pub fn numerator(&self) -> Vec<f64> {
        self.sections
            .iter()
            .fold(vec![1.0], |acc, s| poly_mul(&acc, &s.b))
    }

    /// Expanded denominator; the leading coefficient is 1.
    pub fn denominator(&self) -> Vec<f64> {
        self.sections
            .iter()
            .fold(vec![1.0], |acc, s| poly_mul(&acc, &s.a))
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(Biquad::poles).collect()
    }

    pub fn max_pole_magnitude(&self) -> f64 {
        self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_magnitude() < 1.0
    }

    /// Complex frequency response H(e^{jw}) at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |h, s| h * s.response(z_inv))
    }

    pub fn gain_db(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        20.0 * self.response(freq_hz, sample_rate_hz).norm().log10()
    }

    /// Filters one signal with zero initial state.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        self.filter_in_place(&mut out);
        out
    }

    pub fn filter_in_place(&self, signal: &mut [f64]) {
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for x in signal.iter_mut() {
                let y = s.b[0] * *x + z1;
                z1 = s.b[1] * *x - s.a[1] * y + z2;
                z2 = s.b[2] * *x - s.a[2] * y;
                *x = y;
            }
        }
    }
}

pub fn design_filter(spec: &IirFilterSpec) -> Result<IirCoefficients> {
    spec.check()?;
    let coeffs = match spec.kind {
        FilterKind::Notch => design_notch(spec),
        FilterKind::BandpassButterworth => design_bandpass(spec),
    };
    debug_assert!(coeffs.is_stable());
    Ok(coeffs)
}

/// Single biquad notch at the band midpoint with Q = f0 / bandwidth.
fn design_notch(spec: &IirFilterSpec) -> IirCoefficients {
    let f0 = 0.5 * (spec.low_cut_hz + spec.high_cut_hz);
    let q = f0 / (spec.high_cut_hz - spec.low_cut_hz);
    let w0 = 2.0 * PI * f0 / spec.sample_rate_hz;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let c = -2.0 * w0.cos();
    IirCoefficients::from_sections(vec![Biquad {
        b: [1.0 / a0, c / a0, 1.0 / a0],
        a: [1.0, c / a0, (1.0 - alpha) / a0],
    }])
}

fn design_bandpass(spec: &IirFilterSpec) -> IirCoefficients {
    let n = spec.order;
    let fs2 = 2.0 * spec.sample_rate_hz;
    let warp = |f: f64| fs2 * (PI * f / spec.sample_rate_hz).tan();
    let (w1, w2) = (warp(spec.low_cut_hz), warp(spec.high_cut_hz));
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    // Analog band-pass poles: each prototype pole splits into two.
    let mut analog = Vec::with_capacity(2 * n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
        let root = (p * p - w0_sq).sqrt();
        analog.push(p + root);
        analog.push(p - root);
    }
    // n zeros at s = 0 (-> z = 1), n at infinity (-> z = -1).
    let mut gain = Complex64::new(bw.powi(n as i32) * fs2.powi(n as i32), 0.0);
    for p in &analog {
        gain /= fs2 - p;
    }
    let gain = gain.re;

    let mut digital: Vec<Complex64> = analog.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    digital.retain(|p| p.im > 0.0);
    digital.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.arg().total_cmp(&b.arg())));
    debug_assert_eq!(digital.len(), n);

    let sections = digital
        .iter()
        .enumerate()
        .map(|(i, p)| Biquad {
            b: if i == 0 { [gain, 0.0, -gain] } else { [1.0, 0.0, -1.0] },
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    IirCoefficients::from_sections(sections)
}

/// Filters every channel independently with zero initial state.
pub fn apply_filter(coeffs: &IirCoefficients, seq: &EegSequence) -> EegSequence {
    let mut samples = seq.samples().to_vec();
    let t = seq.len();
    for channel in samples.chunks_mut(t) {
        coeffs.filter_in_place(channel);
    }
    seq.with_samples(t, samples)
}

/// `freq_hz, gain_db` rows for a set of probe frequencies.
pub fn probe(coeffs: &IirCoefficients, sample_rate_hz: f64, freqs: &[f64]) -> Vec<(f64, f64)> {
    freqs
        .iter()
        .map(|&f| (f, coeffs.gain_db(f, sample_rate_hz)))
        .collect()
}

/// Notch then band-pass, as applied to raw recordings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessSpec {
    /// (low, high) edges of the mains notch band.
    pub notch: Option<(f64, f64)>,
    /// (order, low, high) of the Butterworth band-pass.
    pub bandpass: Option<(usize, f64, f64)>,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            notch: Some((49.0, 51.0)),
            bandpass: Some((2, 14.0, 71.0)),
        }
    }
}

impl PreprocessSpec {
    pub fn none() -> Self {
        Self {
            notch: None,
            bandpass: None,
        }
    }

    pub fn design(&self, sample_rate_hz: f64) -> Result<Vec<IirCoefficients>> {
        let mut chain = Vec::new();
        if let Some((lo, hi)) = self.notch {
            chain.push(design_filter(&IirFilterSpec::notch(lo, hi, sample_rate_hz))?);
        }
        if let Some((order, lo, hi)) = self.bandpass {
            chain.push(design_filter(&IirFilterSpec::bandpass(order, lo, hi, sample_rate_hz))?);
        }
        Ok(chain)
    }

    pub fn apply(&self, seq: &EegSequence) -> Result<EegSequence> {
        let chain = self.design(seq.sample_rate_hz)?;
        Ok(chain
            .iter()
            .fold(seq.clone(), |s, c| apply_filter(c, &s)))
    }
}

/// Stimulus-locked interval `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start_ms: f64,
    pub end_ms: f64,
}

impl TimeWindow {
    pub const fn new(start_ms: f64, end_ms: f64) -> Self {
        Self { start_ms, end_ms }
    }

    /// The windows compared across visualization times.
    pub const STANDARD: [TimeWindow; 4] = [
        TimeWindow::new(40.0, 480.0),
        TimeWindow::new(40.0, 160.0),
        TimeWindow::new(40.0, 320.0),
        TimeWindow::new(320.0, 480.0),
    ];

    /// Sample indices `[start, end)`; boundaries round half away from zero.
    pub fn indices(&self, sample_rate_hz: f64) -> (usize, usize) {
        let idx = |ms: f64| (ms * sample_rate_hz / 1000.0).round() as usize;
        (idx(self.start_ms), idx(self.end_ms))
    }
}

impl Default for TimeWindow {
    fn default() -> Self {
        TimeWindow::STANDARD[0]
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start_ms, self.end_ms)
    }
}

impl FromStr for TimeWindow {
    type Err = DspError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_end_matches("ms").trim();
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| DspError::Window(format!("expected START-END, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| DspError::Window(format!("bad millisecond value {v:?}")))
        };
        Ok(TimeWindow::new(parse(a)?, parse(b)?))
    }
}

pub fn window_sequence(seq: &EegSequence, window: &TimeWindow) -> Result<EegSequence> {
    if !(window.start_ms >= 0.0 && window.start_ms < window.end_ms && window.end_ms.is_finite()) {
        return Err(DspError::Window(format!(
            "need 0 <= start < end, got {window}"
        )));
    }
    let (start, end) = window.indices(seq.sample_rate_hz);
    if end > seq.len() {
        return Err(DspError::Window(format!(
            "window {window} ms ends at sample {end}, recording has {}",
            seq.len()
        )));
    }
    if start >= end {
        return Err(DspError::Window(format!("window {window} ms is empty")));
    }
    let len = end - start;
    let mut samples = Vec::with_capacity(len * seq.channels());
    for c in 0..seq.channels() {
        samples.extend_from_slice(&seq.channel(c)[start..end]);
    }
    Ok(seq.with_samples(len, samples))
}
