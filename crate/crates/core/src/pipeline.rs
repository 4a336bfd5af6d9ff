//! End-to-end classification: image features are regressed onto the EEG
//! manifold and classified by the frozen softmax head of the encoder.
//!
//! [`run_experiment`] executes the whole grid: preprocessing, one encoder per
//! (layout, window), feature extraction and aggregation on the training
//! images, regressor fitting, and scoring on the test images. Test data is
//! only ever read for scoring, which the access audit in the report proves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::audit::{AccessAudit, Purpose};
use crate::dsp::{window_sequence, PreprocessSpec, TimeWindow};
use crate::eeg::{load_dataset, read_image_features, split_dataset, Dataset, ImageFeatureTable, LoadOptions, Split, SplitAssignment};
use crate::encoder::{
    argmax, train_encoder_audited, EncoderConfig, EncoderLayout, EncoderModel, TrainHistory, TrainHyper,
};
use crate::manifold::{aggregate, extract_features, Aggregation, FeatureTable};
use crate::regress::{mse, ForestParams, RegressorModel, RegressorSpec};
use crate::synth::{generate_dataset, generate_image_features, SynthSpec};

/// Bumped whenever a field of [`ExperimentReport`] changes meaning.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Published results on the human recordings. Recorded for provenance only;
/// they are not expected to be reproduced by synthetic runs.
pub mod reference {
    /// Best recurrent configuration: maximum validation accuracy.
    pub const MAX_VALIDATION_ACCURACY: f64 = 0.401;
    /// Test accuracy at that configuration's best validation epoch.
    pub const TEST_ACCURACY_AT_MAX_VALIDATION: f64 = 0.358;
    /// Accuracy of the 320-480 ms window.
    pub const LATE_WINDOW_ACCURACY: f64 = 0.418;
    /// Best image-to-EEG regression MSE (pretrained features, k-NN, average).
    pub const BEST_REGRESSION_MSE: f64 = 0.8;
    /// Mean end-to-end image classification accuracy.
    pub const END_TO_END_ACCURACY: f64 = 0.851;
    /// Transfer accuracy on a Caltech-101 subset (not implemented here).
    pub const TRANSFER_ACCURACY: f64 = 0.693;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Preprocess,
    Split,
    Window,
    Train,
    Extract,
    Aggregate,
    Regress,
    Classify,
    Evaluate,
    Write,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Preprocess => "preprocess",
            Stage::Split => "split",
            Stage::Window => "window",
            Stage::Train => "train",
            Stage::Extract => "extract",
            Stage::Aggregate => "aggregate",
            Stage::Regress => "regress",
            Stage::Classify => "classify",
            Stage::Evaluate => "evaluate",
            Stage::Write => "write",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Wraps any displayable error as a failure of `stage`.
pub fn at<E: std::fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
    }
}

/// Chained prediction for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub class_id: u32,
    pub probabilities: Vec<f64>,
}

impl Classification {
    pub fn max_prob(&self) -> f64 {
        self.probabilities[self.class_id as usize]
    }
}

/// Regressor then softmax head; ties go to the lowest class id.
pub fn classify_image_features(
    regressor: &RegressorModel,
    encoder: &EncoderModel,
    x: &[f64],
) -> Result<Classification> {
    if regressor.output_dim() != encoder.feature_dim() {
        return Err(PipelineError {
            stage: Stage::Classify,
            message: format!(
                "regressor predicts {} components, encoder head expects {}",
                regressor.output_dim(),
                encoder.feature_dim()
            ),
        });
    }
    let features = regressor.predict(x).map_err(at(Stage::Regress))?;
    classify_eeg_features(encoder, &features)
}

/// The direct path: softmax head on an EEG feature vector.
pub fn classify_eeg_features(encoder: &EncoderModel, features: &[f64]) -> Result<Classification> {
    let probabilities = encoder.classify_features(features).map_err(at(Stage::Classify))?;
    Ok(Classification {
        class_id: argmax(&probabilities) as u32,
        probabilities,
    })
}

/// Fraction of exact matches.
pub fn evaluate_accuracy(predictions: &[u32], labels: &[u32]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Unweighted mean over classes present in `labels` of per-class accuracy.
pub fn mean_class_accuracy(predictions: &[u32], labels: &[u32]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let mut per: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (p, l) in predictions.iter().zip(labels) {
        let e = per.entry(*l).or_default();
        e.0 += usize::from(p == l);
        e.1 += 1;
    }
    Ok(per.values().map(|(c, n)| *c as f64 / *n as f64).sum::<f64>() / per.len() as f64)
}

fn check_lengths(predictions: &[u32], labels: &[u32]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(PipelineError {
            stage: Stage::Evaluate,
            message: format!("{} predictions for {} labels", predictions.len(), labels.len()),
        });
    }
    if labels.is_empty() {
        return Err(PipelineError {
            stage: Stage::Evaluate,
            message: "no labels to score".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub image_id: u32,
    pub true_class: u32,
    pub predicted_class: u32,
    pub max_prob: f64,
}

pub const PREDICTION_HEADER: &str = "image_id,true_class,predicted_class,max_prob";

pub fn predictions_to_csv(rows: &[PredictionRow]) -> String {
    let mut out = format!("{PREDICTION_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.image_id, r.true_class, r.predicted_class, r.max_prob);
    }
    out
}

pub fn predictions_from_csv(text: &str) -> Result<Vec<PredictionRow>> {
    let bad = |line: usize, m: &str| PipelineError {
        stage: Stage::Evaluate,
        message: format!("prediction dump line {line}: {m}"),
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == PREDICTION_HEADER) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad(i + 1, "expected 4 fields"));
        }
        let int = |s: &str| s.parse::<u32>().map_err(|_| bad(i + 1, "bad integer"));
        rows.push(PredictionRow {
            image_id: int(f[0])?,
            true_class: int(f[1])?,
            predicted_class: int(f[2])?,
            max_prob: f[3].parse().map_err(|_| bad(i + 1, "bad probability"))?,
        });
    }
    Ok(rows)
}

/// Accuracy recomputed from a dump.
pub fn accuracy_of(rows: &[PredictionRow]) -> Result<f64> {
    let p: Vec<u32> = rows.iter().map(|r| r.predicted_class).collect();
    let l: Vec<u32> = rows.iter().map(|r| r.true_class).collect();
    evaluate_accuracy(&p, &l)
}

#[derive(Debug, Clone)]
pub enum DataSource {
    /// Generated recordings plus `image_feature_dim`-dimensional image features.
    Synthetic { spec: SynthSpec, image_feature_dim: usize },
    /// A recording file and, optionally, an image-feature file. Without image
    /// features only the encoder grid runs.
    Files {
        eeg: PathBuf,
        image_features: Option<PathBuf>,
        load: LoadOptions,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub preprocess: PreprocessSpec,
    /// Train / validation / test fractions of the images of each class.
    pub split_fractions: [f64; 3],
    pub encoders: Vec<EncoderLayout>,
    pub normalize: bool,
    pub hyper: TrainHyper,
    pub windows: Vec<TimeWindow>,
    pub aggregations: Vec<Aggregation>,
    pub regressors: Vec<RegressorSpec>,
    /// Drives the split and every encoder's initialization and shuffling.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic {
                spec: SynthSpec::default(),
                image_feature_dim: 64,
            },
            preprocess: PreprocessSpec::default(),
            split_fractions: [0.7, 0.15, 0.15],
            encoders: vec![
                EncoderLayout::common(&[32]),
                EncoderLayout::channel_common(4, &[32]),
                EncoderLayout::common_output(&[32], 32),
            ],
            normalize: true,
            hyper: TrainHyper {
                learning_rate: 1e-2,
                momentum: 0.9,
                batch_size: 16,
                epochs: 50,
            },
            windows: TimeWindow::STANDARD.to_vec(),
            aggregations: vec![Aggregation::Average, Aggregation::Best],
            regressors: vec![
                RegressorSpec::knn(5),
                RegressorSpec::ridge(1.0),
                RegressorSpec::RandomForest(ForestParams::default()),
            ],
            seed: 0,
        }
    }
}

fn config_error(message: String) -> PipelineError {
    PipelineError {
        stage: Stage::Load,
        message,
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("encoders", self.encoders.is_empty()),
            ("windows", self.windows.is_empty()),
            ("aggregations", self.aggregations.is_empty()),
            ("regressors", self.regressors.is_empty()),
        ] {
            if empty {
                return Err(config_error(format!("the {name} grid is empty")));
            }
        }
        if self.aggregations.contains(&Aggregation::None) {
            return Err(config_error("aggregation must be average or best".into()));
        }
        if let DataSource::Files { eeg, image_features, .. } = &self.data {
            for p in std::iter::once(eeg).chain(image_features) {
                if !p.exists() {
                    return Err(config_error(format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

/// Loaded, preprocessed and split inputs shared by every grid cell.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub image_features: Option<ImageFeatureTable>,
    pub split: SplitAssignment,
}

pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let (raw, image_features) = match &config.data {
        DataSource::Synthetic {
            spec,
            image_feature_dim,
        } => {
            let (ds, _) = generate_dataset(spec).map_err(at(Stage::Load))?;
            let f = generate_image_features(spec, *image_feature_dim).map_err(at(Stage::Load))?;
            (ds, Some(f))
        }
        DataSource::Files {
            eeg,
            image_features,
            load,
        } => {
            let (ds, _) = load_dataset(eeg, image_features.as_deref(), load).map_err(at(Stage::Load))?;
            let f = match image_features {
                // keep the provenance tag of the source file
                Some(p) => ds.image_features(&read_image_features(p).map_err(at(Stage::Load))?.source_tag),
                None => None,
            };
            (ds, f)
        }
    };
    let dataset = raw
        .map_sequences(|s| config.preprocess.apply(s))
        .map_err(at(Stage::Preprocess))?;
    let split = split_dataset(&dataset, config.split_fractions, config.seed).map_err(at(Stage::Split))?;
    Ok(PreparedData {
        dataset,
        image_features,
        split,
    })
}

/// Recordings of the images assigned to `which`.
pub fn split_subset(dataset: &Dataset, split: &SplitAssignment, which: Split) -> Result<Dataset> {
    let seqs = dataset
        .sequences()
        .iter()
        .filter(|s| split.split_of(s.image_id) == Some(which))
        .cloned()
        .collect();
    Dataset::new(seqs, dataset.class_count, dataset.subject_count).map_err(at(Stage::Split))
}

/// Short file-name-safe identifier, e.g. `common_output.h32_o32.40-480ms`.
pub fn encoder_key(layout: &EncoderLayout, window: &TimeWindow) -> String {
    let mut parts = Vec::new();
    if let Some(c) = layout.channel_hidden {
        parts.push(format!("c{c}"));
    }
    let common: Vec<String> = layout.common.iter().map(usize::to_string).collect();
    parts.push(format!("h{}", common.join("x")));
    if let Some(o) = layout.output {
        parts.push(format!("o{o}"));
    }
    format!("{}.{}.{}-{}ms", layout.architecture(), parts.join("_"), window.start_ms, window.end_ms)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncoderRow {
    pub key: String,
    pub architecture: String,
    pub layout: String,
    pub window: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub max_val_acc: Option<f64>,
    pub test_acc_at_max_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionRow {
    pub encoder: String,
    pub aggregation: String,
    pub regressor: String,
    pub kind: String,
    pub params: String,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub mse: f64,
    /// Softmax head applied to the true aggregated test EEG features.
    pub direct_accuracy: f64,
    pub direct_mean_class_accuracy: f64,
    /// Regressed image features through the same head.
    pub end_to_end_accuracy: f64,
    pub end_to_end_mean_class_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSummary {
    pub train_fit: usize,
    pub val_select: usize,
    pub test_report: usize,
    pub test_leaks: usize,
}

impl From<&AccessAudit> for AuditSummary {
    fn from(a: &AccessAudit) -> Self {
        Self {
            train_fit: a.count(Split::Train, Purpose::Fit),
            val_select: a.count(Split::Val, Purpose::Select),
            test_report: a.count(Split::Test, Purpose::Report),
            test_leaks: a.test_leaks(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct References {
    pub max_validation_accuracy: f64,
    pub test_accuracy_at_max_validation: f64,
    pub late_window_accuracy: f64,
    pub best_regression_mse: f64,
    pub end_to_end_accuracy: f64,
    pub transfer_accuracy: f64,
}

impl Default for References {
    fn default() -> Self {
        Self {
            max_validation_accuracy: reference::MAX_VALIDATION_ACCURACY,
            test_accuracy_at_max_validation: reference::TEST_ACCURACY_AT_MAX_VALIDATION,
            late_window_accuracy: reference::LATE_WINDOW_ACCURACY,
            best_regression_mse: reference::BEST_REGRESSION_MSE,
            end_to_end_accuracy: reference::END_TO_END_ACCURACY,
            transfer_accuracy: reference::TRANSFER_ACCURACY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub seed: u64,
    pub sequences: usize,
    pub images: usize,
    pub split: BTreeMap<String, usize>,
    /// One row per (encoder layout, window), in grid order.
    pub encoders: Vec<EncoderRow>,
    /// One row per (encoder layout, window, aggregation, regressor).
    pub regression: Vec<RegressionRow>,
    pub audit: AuditSummary,
    /// Published values for comparison; never computed.
    pub references: References,
    /// Set when a stage failed; rows above are the completed part.
    pub failure: Option<String>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Best validation accuracy and the test accuracy at that epoch, for the
    /// first window of the grid.
    pub fn architecture_csv(&self) -> String {
        let first = self.encoders.first().map(|r| r.window.clone());
        let mut out = String::from("architecture,layout,window,max_val_acc,test_acc_at_max_val\n");
        for r in self.encoders.iter().filter(|r| Some(&r.window) == first.as_ref()) {
            let _ = writeln!(out, "{},{},{},{},{}", r.architecture, quote(&r.layout), r.window, opt(r.max_val_acc), opt(r.test_acc_at_max_val));
        }
        out
    }

    /// Accuracy of every encoder at every window.
    pub fn window_csv(&self) -> String {
        let mut out = String::from("window,architecture,layout,max_val_acc,test_acc_at_max_val\n");
        for r in &self.encoders {
            let _ = writeln!(out, "{},{},{},{},{}", r.window, r.architecture, quote(&r.layout), opt(r.max_val_acc), opt(r.test_acc_at_max_val));
        }
        out
    }

    /// `kind, params, mse` per regression cell, plus the cell coordinates.
    pub fn regression_csv(&self) -> String {
        let mut out = String::from("encoder,aggregation,kind,params,mse\n");
        for r in &self.regression {
            let _ = writeln!(out, "{},{},{},{},{}", r.encoder, r.aggregation, r.kind, quote(&r.params), r.mse);
        }
        out
    }

    pub fn end_to_end_csv(&self) -> String {
        let mut out = String::from(
            "encoder,aggregation,regressor,direct_accuracy,direct_mean_class_accuracy,end_to_end_accuracy,end_to_end_mean_class_accuracy\n",
        );
        for r in &self.regression {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.encoder,
                r.aggregation,
                quote(&r.regressor),
                r.direct_accuracy,
                r.direct_mean_class_accuracy,
                r.end_to_end_accuracy,
                r.end_to_end_mean_class_accuracy
            );
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

fn quote(s: &str) -> String {
    if s.contains(',') {
        format!("\"{s}\"")
    } else {
        s.to_string()
    }
}

/// Everything a run produces besides the report.
#[derive(Debug, Clone, Default)]
pub struct ExperimentArtifacts {
    pub split: Option<SplitAssignment>,
    pub encoders: Vec<(String, EncoderModel, TrainHistory)>,
    /// Keyed by `encoder/aggregation/r<index>-<kind>`.
    pub regressors: Vec<(String, RegressorModel)>,
    pub predictions: Vec<(String, Vec<PredictionRow>)>,
}

#[derive(Debug)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub artifacts: ExperimentArtifacts,
    pub error: Option<PipelineError>,
}

/// One trained encoder's regression and end-to-end evaluation.
#[derive(Debug, Clone)]
pub struct RegressionCell {
    pub row: RegressionRow,
    pub model: RegressorModel,
    pub predictions: Vec<PredictionRow>,
}

/// Feature tables of one encoder: aggregated training images for fitting
/// and aggregated test images for scoring.
pub struct CellFeatures {
    pub train: FeatureTable,
    pub test: FeatureTable,
}

/// Extracts and aggregates features of the training and test images.
pub fn cell_features(
    encoder: &EncoderModel,
    train: &Dataset,
    test: &Dataset,
    how: Aggregation,
    audit: &AccessAudit,
) -> Result<CellFeatures> {
    audit.record(Split::Train, Purpose::Fit, train.len());
    let train_raw = extract_features(encoder, train).map_err(at(Stage::Extract))?;
    audit.record(Split::Test, Purpose::Report, test.len());
    let test_raw = extract_features(encoder, test).map_err(at(Stage::Extract))?;
    Ok(CellFeatures {
        train: aggregate(&train_raw, how).map_err(at(Stage::Aggregate))?,
        test: aggregate(&test_raw, how).map_err(at(Stage::Aggregate))?,
    })
}

/// Pairs `(image feature, target)` of every image in `table` that has image
/// features, in image-id order.
pub fn regression_pairs(images: &ImageFeatureTable, table: &FeatureTable) -> (Vec<u32>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut ids = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for id in table.image_ids() {
        if let (Some(x), Some(y)) = (images.get(id), table.target(id)) {
            ids.push(id);
            xs.push(x.to_vec());
            ys.push(y.to_vec());
        }
    }
    (ids, xs, ys)
}

/// Fits one regressor on the training pairs and scores MSE, direct and
/// end-to-end accuracy on the test pairs.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_regression_cell(
    encoder: &EncoderModel,
    encoder_key: &str,
    features: &CellFeatures,
    images: &ImageFeatureTable,
    dataset: &Dataset,
    how: Aggregation,
    spec: &RegressorSpec,
    audit: &AccessAudit,
) -> Result<RegressionCell> {
    let (_, x_train, y_train) = regression_pairs(images, &features.train);
    let (test_ids, x_test, y_test) = regression_pairs(images, &features.test);
    if x_train.is_empty() || x_test.is_empty() {
        return Err(PipelineError {
            stage: Stage::Regress,
            message: "no images with both image features and EEG features".into(),
        });
    }
    audit.record(Split::Train, Purpose::Fit, x_train.len());
    let model = spec.fit(&x_train, &y_train).map_err(at(Stage::Regress))?;
    audit.record(Split::Test, Purpose::Report, x_test.len());
    let predicted = model.predict_many(&x_test).map_err(at(Stage::Regress))?;
    let error = mse(&predicted, &y_test).map_err(at(Stage::Evaluate))?;
    let labels: Vec<u32> = test_ids
        .iter()
        .map(|id| dataset.class_of(*id).expect("test image belongs to the dataset"))
        .collect();
    let mut direct = Vec::with_capacity(labels.len());
    let mut rows = Vec::with_capacity(labels.len());
    for ((id, y), (p, label)) in test_ids.iter().zip(&y_test).zip(predicted.iter().zip(&labels)) {
        direct.push(classify_eeg_features(encoder, y)?.class_id);
        let c = classify_eeg_features(encoder, p)?;
        rows.push(PredictionRow {
            image_id: *id,
            true_class: *label,
            predicted_class: c.class_id,
            max_prob: c.max_prob(),
        });
    }
    let e2e: Vec<u32> = rows.iter().map(|r| r.predicted_class).collect();
    let spec = model.spec();
    let row = RegressionRow {
        encoder: encoder_key.to_string(),
        aggregation: how.to_string(),
        regressor: spec.to_string(),
        kind: spec.kind().to_string(),
        params: spec.params(),
        train_pairs: x_train.len(),
        test_pairs: x_test.len(),
        mse: error,
        direct_accuracy: evaluate_accuracy(&direct, &labels)?,
        direct_mean_class_accuracy: mean_class_accuracy(&direct, &labels)?,
        end_to_end_accuracy: evaluate_accuracy(&e2e, &labels)?,
        end_to_end_mean_class_accuracy: mean_class_accuracy(&e2e, &labels)?,
    };
    Ok(RegressionCell {
        row,
        model,
        predictions: rows,
    })
}

/// Runs the grid. Failures stop the run; the returned report then holds the
/// completed rows and names the failed stage.
pub fn run_experiment(config: &ExperimentConfig) -> ExperimentRun {
    let audit = AccessAudit::new();
    let mut report = ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: config.seed,
        sequences: 0,
        images: 0,
        split: BTreeMap::new(),
        encoders: Vec::new(),
        regression: Vec::new(),
        audit: AuditSummary::from(&audit),
        references: References::default(),
        failure: None,
    };
    let mut artifacts = ExperimentArtifacts::default();
    let result = run_grid(config, &audit, &mut report, &mut artifacts);
    report.audit = AuditSummary::from(&audit);
    let error = result.err();
    report.failure = error.as_ref().map(ToString::to_string);
    ExperimentRun {
        report,
        artifacts,
        error,
    }
}

fn run_grid(
    config: &ExperimentConfig,
    audit: &AccessAudit,
    report: &mut ExperimentReport,
    artifacts: &mut ExperimentArtifacts,
) -> Result<()> {
    config.validate()?;
    let data = prepare_data(config)?;
    report.sequences = data.dataset.len();
    report.images = data.dataset.images().len();
    for s in [Split::Train, Split::Val, Split::Test] {
        report.split.insert(s.to_string(), data.split.count(s));
    }
    artifacts.split = Some(data.split.clone());
    let channels = data.dataset.sequences()[0].channels();
    for layout in &config.encoders {
        for window in &config.windows {
            let key = encoder_key(layout, window);
            let windowed = data
                .dataset
                .map_sequences(|s| window_sequence(s, window))
                .map_err(at(Stage::Window))?;
            let mut enc_cfg = EncoderConfig::new(layout.clone(), channels, data.dataset.class_count);
            enc_cfg.normalize = config.normalize;
            let (encoder, history) =
                train_encoder_audited(&windowed, &data.split, &enc_cfg, &config.hyper, config.seed, audit)
                    .map_err(at(Stage::Train))?;
            report.encoders.push(EncoderRow {
                key: key.clone(),
                architecture: layout.architecture().to_string(),
                layout: layout.to_string(),
                window: window.to_string(),
                epochs: history.epochs.len(),
                best_epoch: history.best_epoch,
                max_val_acc: history.max_val_acc(),
                test_acc_at_max_val: history.test_acc_at_best(),
            });
            if let Some(images) = &data.image_features {
                let train = split_subset(&windowed, &data.split, Split::Train)?;
                let test = split_subset(&windowed, &data.split, Split::Test)?;
                for &how in &config.aggregations {
                    let features = cell_features(&encoder, &train, &test, how, audit)?;
                    for (ri, spec) in config.regressors.iter().enumerate() {
                        let cell =
                            evaluate_regression_cell(&encoder, &key, &features, images, &windowed, how, spec, audit)?;
                        let cell_key = format!("{key}/{how}/r{ri}-{}", spec.kind());
                        report.regression.push(cell.row);
                        artifacts.regressors.push((cell_key.clone(), cell.model));
                        artifacts.predictions.push((cell_key, cell.predictions));
                    }
                }
            }
            artifacts.encoders.push((key, encoder, history));
        }
    }
    Ok(())
}

impl ExperimentRun {
    /// Writes the report, CSV table exports, split, models, training
    /// histories and prediction dumps under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let w = |p: PathBuf, bytes: &[u8]| -> Result<()> {
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(at(Stage::Write))?;
            }
            fs::write(&p, bytes).map_err(|e| PipelineError {
                stage: Stage::Write,
                message: format!("{}: {e}", p.display()),
            })
        };
        let r = &self.report;
        w(dir.join("report.json"), r.to_json().as_bytes())?;
        w(dir.join("architectures.csv"), r.architecture_csv().as_bytes())?;
        w(dir.join("windows.csv"), r.window_csv().as_bytes())?;
        w(dir.join("regression.csv"), r.regression_csv().as_bytes())?;
        w(dir.join("end_to_end.csv"), r.end_to_end_csv().as_bytes())?;
        if let Some(split) = &self.artifacts.split {
            w(dir.join("split.txt"), split.to_text().as_bytes())?;
        }
        for (key, model, history) in &self.artifacts.encoders {
            w(dir.join("encoders").join(format!("{key}.bfenc")), &model.to_bytes())?;
            w(dir.join("encoders").join(format!("{key}.history.csv")), history.to_text().as_bytes())?;
        }
        for (key, model) in &self.artifacts.regressors {
            w(dir.join("regressors").join(format!("{key}.bfreg")), &model.to_bytes())?;
        }
        for (key, rows) in &self.artifacts.predictions {
            w(dir.join("predictions").join(format!("{key}.csv")), predictions_to_csv(rows).as_bytes())?;
        }
        Ok(())
    }
}
