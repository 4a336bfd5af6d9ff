//! Central finite-difference check of the BPTT gradient.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::precise::{Dd, LossEvaluator, Real};
use super::{Architecture, EncoderConfig, EncoderError, EncoderLayout, EncoderModel, Result};
use crate::eeg::EegSequence;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst parameter.
    pub worst: (String, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub parameters: usize,
}

/// Compares the analytic gradient of the cross-entropy loss against central
/// differences for every parameter. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-12)`.
///
/// The analytic side is the f64 training gradient. The perturbed losses are
/// evaluated in double-double so the difference quotient is not dominated by
/// rounding in the loss.
pub fn grad_check(model: &EncoderModel, seq: &EegSequence, label: usize, epsilon: f64) -> Result<GradCheck> {
    let input = model.prepare(seq)?;
    let classes = model.class_count();
    if label >= classes {
        return Err(super::EncoderError::Label { label, classes });
    }
    let cfg = &model.config;
    let (_, grad) = model.params.loss_and_grad(cfg, &input, label);
    let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.values.to_vec()).collect();
    let names: Vec<String> = model.params.tensors().iter().map(|t| t.name.clone()).collect();

    let mut probe = LossEvaluator::<Dd>::new(&model.params, &input, label);
    let values: Vec<Vec<f64>> = model.params.tensors().iter().map(|t| t.values.to_vec()).collect();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        analytic: 0.0,
        numeric: 0.0,
        parameters: 0,
    };
    for (ti, name) in names.iter().enumerate() {
        for k in 0..analytic[ti].len() {
            let original = Dd::of(values[ti][k]);
            let plus = probe.loss_with(ti, k, original + Dd::of(epsilon));
            let minus = probe.loss_with(ti, k, original - Dd::of(epsilon));
            let numeric = (plus - minus).to_f64() / (2.0 * epsilon);
            let a = analytic[ti][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            out.parameters += 1;
            if rel > out.max_rel_error || out.worst.0.is_empty() {
                out.max_rel_error = out.max_rel_error.max(rel);
                out.worst = (name.clone(), k);
                out.analytic = a;
                out.numeric = numeric;
            }
        }
    }
    Ok(out)
}

/// A random model, input and label for exercising [`grad_check`].
#[derive(Debug, Clone)]
pub struct CheckInstance {
    pub model: EncoderModel,
    pub sequence: EegSequence,
    pub label: usize,
}

impl CheckInstance {
    /// Seeded model of the given layout with a standard-normal input of
    /// `steps` samples per channel.
    pub fn new(layout: EncoderLayout, channels: usize, classes: usize, steps: usize, seed: u64) -> Result<Self> {
        let config = EncoderConfig::new(layout, channels, classes);
        let model = EncoderModel::init(config, steps, seed)?;
        let mut rng = rng::stream(seed, &[0x6c4e]);
        let samples: Vec<f64> = (0..channels * steps).map(|_| rng.sample(StandardNormal)).collect();
        let sequence = EegSequence::new(0, 0, 0, 250.0, channels, samples)
            .map_err(|e| EncoderError::Config(e.to_string()))?;
        let label = rng.random_range(0..classes);
        Ok(Self { model, sequence, label })
    }

    /// Sizes drawn from the seed: up to 4 channels, `hidden_max` units per
    /// recurrent layer, `steps_max` steps and `classes_max` classes.
    pub fn random(arch: Architecture, hidden_max: usize, steps_max: usize, classes_max: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, &[0x6c4f]);
        let mut hidden = || rng.random_range(2..=hidden_max.max(2));
        let layout = match arch {
            Architecture::Common => {
                let first = hidden();
                let second = hidden();
                if second % 2 == 0 {
                    EncoderLayout::common(&[first, second])
                } else {
                    EncoderLayout::common(&[first])
                }
            }
            Architecture::ChannelCommon => {
                let channel = hidden().div_ceil(3);
                EncoderLayout::channel_common(channel, &[hidden()])
            }
            Architecture::CommonOutput => {
                let common = hidden();
                EncoderLayout::common_output(&[common], hidden())
            }
        };
        let channels = rng.random_range(2..=4);
        let classes = rng.random_range(2..=classes_max.max(2));
        let steps = rng.random_range(2..=steps_max.max(2));
        Self::new(layout, channels, classes, steps, seed)
    }

    pub fn check(&self, epsilon: f64) -> Result<GradCheck> {
        grad_check(&self.model, &self.sequence, self.label, epsilon)
    }
}
