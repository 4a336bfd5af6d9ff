//! Minibatch gradient descent with momentum, selected by validation accuracy.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{argmax, EncoderConfig, EncoderError, EncoderModel, EncoderParams, Result};
use crate::audit::{AccessAudit, Purpose};
use crate::eeg::{Dataset, Split, SplitAssignment};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 16,
            epochs: 100,
        }
    }
}

/// A prepared (time-major, possibly standardized) labelled input.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Vec<Vec<f64>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (0-based index into `epochs`) whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }

    pub fn max_val_acc(&self) -> Option<f64> {
        self.best().val_acc
    }

    pub fn test_acc_at_best(&self) -> Option<f64> {
        self.best().test_acc
    }

    /// `epoch, train_loss, val_acc, test_acc` rows; missing accuracies print as `NA`.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::from("epoch,train_loss,val_acc,test_acc\n");
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.epoch,
                r.train_loss,
                fmt(r.val_acc),
                fmt(r.test_acc)
            );
        }
        out
    }
}

fn accuracy(params: &EncoderParams, cfg: &EncoderConfig, samples: &[Sample]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let correct: usize = samples
        .par_iter()
        .map(|s| usize::from(argmax(&params.forward(cfg, &s.input, false).logits) == s.label))
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Some(correct as f64 / samples.len() as f64)
}

/// Trains on prepared samples. Validation accuracy selects the kept epoch
/// (earliest maximum); with no validation samples the lowest training loss
/// is used instead. Test samples are only scored.
pub fn train_on(
    config: &EncoderConfig,
    input_len: usize,
    train: &[Sample],
    val: &[Sample],
    test: &[Sample],
    hyper: &TrainHyper,
    seed: u64,
) -> Result<(EncoderModel, TrainHistory)> {
    if train.is_empty() {
        return Err(EncoderError::EmptySplit(Split::Train));
    }
    if hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) || !(0.0..1.0).contains(&hyper.momentum) {
        return Err(EncoderError::Config(format!("invalid training hyperparameters {hyper:?}")));
    }
    for s in train.iter().chain(val).chain(test) {
        if s.label >= config.class_count {
            return Err(EncoderError::Label {
                label: s.label,
                classes: config.class_count,
            });
        }
    }
    let mut model = EncoderModel::init(config.clone(), input_len, seed)?;
    let mut velocity = model.params.zeros_like();
    let mut best: Option<(usize, f64, EncoderParams)> = None;
    let mut epochs = Vec::with_capacity(hyper.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..hyper.epochs.max(1) {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(seed, &[0x7a1, epoch as u64]));
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(hyper.batch_size).enumerate() {
            let params = &model.params;
            let results: Vec<(f64, EncoderParams)> = batch
                .par_iter()
                .map(|&i| params.loss_and_grad(config, &train[i].input, train[i].label))
                .collect();
            // fixed-order reduction keeps results independent of thread count
            let mut grad = params.zeros_like();
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                grad.add_scaled(g, 1.0);
            }
            if !batch_loss.is_finite() {
                return Err(EncoderError::Diverged {
                    epoch,
                    batch: bi,
                    loss: batch_loss,
                });
            }
            loss_sum += batch_loss;
            velocity.scale(hyper.momentum);
            velocity.add_scaled(&grad, -hyper.learning_rate / batch.len() as f64);
            model.params.add_scaled(&velocity, 1.0);
            if !model.params.is_finite() {
                return Err(EncoderError::Diverged {
                    epoch,
                    batch: bi,
                    loss: f64::NAN,
                });
            }
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_acc = accuracy(&model.params, config, val);
        let test_acc = accuracy(&model.params, config, test);
        // higher is better: validation accuracy, else negated training loss
        let score = val_acc.unwrap_or(-train_loss);
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((epoch, score, model.params.clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_acc,
            test_acc,
        });
    }
    let (best_epoch, _, params) = best.expect("at least one epoch");
    model.params = params;
    Ok((model, TrainHistory { epochs, best_epoch }))
}

/// Builds the samples of the images assigned to `split`, in dataset order.
pub(crate) fn samples_for(
    dataset: &Dataset,
    split: &SplitAssignment,
    which: Split,
    shape: &EncoderModel,
) -> Result<Vec<Sample>> {
    dataset
        .sequences()
        .iter()
        .filter(|s| split.split_of(s.image_id) == Some(which))
        .map(|s| {
            Ok(Sample {
                input: shape.prepare(s)?,
                label: s.class_id as usize,
            })
        })
        .collect()
}

pub fn train_encoder(
    dataset: &Dataset,
    split: &SplitAssignment,
    config: &EncoderConfig,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<(EncoderModel, TrainHistory)> {
    train_encoder_audited(dataset, split, config, hyper, seed, &AccessAudit::new())
}

/// As [`train_encoder`], recording which splits were read and why.
pub fn train_encoder_audited(
    dataset: &Dataset,
    split: &SplitAssignment,
    config: &EncoderConfig,
    hyper: &TrainHyper,
    seed: u64,
    audit: &AccessAudit,
) -> Result<(EncoderModel, TrainHistory)> {
    config.check()?;
    let first = dataset.sequences().first().ok_or(EncoderError::EmptySplit(Split::Train))?;
    let len = first.len();
    if let Some(s) = dataset.sequences().iter().find(|s| s.len() != len) {
        return Err(EncoderError::RaggedInput(len, s.len()));
    }
    // shape-only model used to validate and prepare inputs
    let shape = EncoderModel::zeros(config.clone(), len)?;
    let train = samples_for(dataset, split, Split::Train, &shape)?;
    let val = samples_for(dataset, split, Split::Val, &shape)?;
    let test = samples_for(dataset, split, Split::Test, &shape)?;
    for (which, s) in [(Split::Train, &train), (Split::Val, &val), (Split::Test, &test)] {
        if s.is_empty() {
            return Err(EncoderError::EmptySplit(which));
        }
    }
    audit.record(Split::Train, Purpose::Fit, train.len());
    audit.record(Split::Val, Purpose::Select, val.len());
    audit.record(Split::Test, Purpose::Report, test.len());
    train_on(config, len, &train, &val, &test, hyper, seed)
}
