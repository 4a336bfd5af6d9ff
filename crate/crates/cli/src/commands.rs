//! Subcommand implementations. Each reads its inputs, runs one stage and
//! writes its outputs; progress goes to stdout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use brainfold_core::dsp::{design_filter, probe, IirFilterSpec, PreprocessSpec, TimeWindow, window_sequence};
use brainfold_core::eeg::{
    load_dataset, read_eeg_file, read_image_features, split_dataset, write_eeg_csv, write_eeg_file,
    write_image_features, Dataset, LoadOptions, Split, SplitAssignment, ValidationRules,
};
use brainfold_core::encoder::{train_encoder as fit_encoder, CheckInstance, EncoderConfig, EncoderLayout, EncoderModel, TrainHyper};
use brainfold_core::manifold::{aggregate as reduce, extract_features as encode_all, Aggregation, FeatureTable};
use brainfold_core::pipeline::{
    accuracy_of, at, classify_image_features, mean_class_accuracy, predictions_from_csv, predictions_to_csv,
    regression_pairs, run_experiment, split_subset, PipelineError, PredictionRow, Result, Stage,
};
use brainfold_core::regress::{evaluate_mse, RegressorModel, RegressorSpec};
use brainfold_core::synth::{generate_dataset, generate_image_features, SignatureMode, SynthSpec};

use crate::config::{parse_band, PipelineConfig};
use crate::{
    AggregateArgs, ArchArg, ClassifyArgs, EvaluateArgs, ExperimentArgs, ExtractArgs, FilterArg, FitArgs, GradCheckArgs,
    LoadArgs, ModeArg, PreprocessArgs, ProbeArgs, SubsetArgs, SynthArgs, TrainArgs,
};

fn fail(stage: Stage, message: impl Into<String>) -> PipelineError {
    PipelineError {
        stage,
        message: message.into(),
    }
}

fn parse<T: std::str::FromStr>(stage: Stage, flag: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| fail(stage, format!("--{flag} {v:?}: {e}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| fail(Stage::Write, format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| fail(Stage::Write, format!("{}: {e}", path.display())))
}

fn read_text(path: &Path, stage: Stage) -> Result<String> {
    fs::read_to_string(path).map_err(|e| fail(stage, format!("{}: {e}", path.display())))
}

/// `path` with `suffix` replacing its extension, e.g. `enc.bfenc` to `enc.history.csv`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

/// Loads and validates a recording file, inferring unspecified counts from it.
fn load(path: &Path, args: &LoadArgs) -> Result<Dataset> {
    let (header, seqs) = read_eeg_file(path).map_err(at(Stage::Load))?;
    let max = |f: fn(&brainfold_core::eeg::EegSequence) -> u32| seqs.iter().map(|s| f(s) as usize + 1).max().unwrap_or(0);
    let opts = LoadOptions {
        class_count: args.classes.unwrap_or_else(|| max(|s| s.class_id)),
        subject_count: args.subjects.unwrap_or_else(|| max(|s| s.subject_id)),
        rules: ValidationRules {
            channel_count: args.channels.unwrap_or(header.channels as usize),
            amplitude_threshold: args.amplitude_threshold,
        },
        min_samples: args.min_samples,
    };
    let (ds, report) = load_dataset(path, None, &opts).map_err(at(Stage::Load))?;
    if report.dropped > 0 {
        println!(
            "dropped {} of {} recordings ({} non-finite, {} over amplitude, {} wrong channel count)",
            report.dropped, report.records, report.dropped_non_finite, report.dropped_amplitude, report.dropped_channel_count
        );
    }
    Ok(ds)
}

fn labels_text(ds: &Dataset) -> String {
    let mut out = String::from("image_id,class_id\n");
    for (id, info) in ds.images() {
        let _ = writeln!(out, "{id},{}", info.class_id);
    }
    out
}

fn read_labels(path: &Path) -> Result<BTreeMap<u32, u32>> {
    let text = read_text(path, Stage::Load)?;
    let mut labels = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || fail(Stage::Load, format!("{} line {}: expected image_id,class_id", path.display(), i + 1));
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        let (a, b) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if labels.insert(a, b).is_some() {
            return Err(fail(Stage::Load, format!("{}: image {a} listed twice", path.display())));
        }
    }
    Ok(labels)
}

fn read_split(path: &Path) -> Result<SplitAssignment> {
    SplitAssignment::from_text(&read_text(path, Stage::Split)?).map_err(|e| fail(Stage::Split, format!("{}: {e}", path.display())))
}

/// The requested subset, or `default` when a split file is given alone.
fn subset(args: &SubsetArgs, default: Split) -> Result<Option<(SplitAssignment, Split)>> {
    let Some(path) = &args.split else {
        return Ok(None);
    };
    let which = match &args.subset {
        Some(s) => parse(Stage::Split, "subset", s)?,
        None => default,
    };
    Ok(Some((read_split(path)?, which)))
}

fn keep_fn(sel: &Option<(SplitAssignment, Split)>) -> impl Fn(u32) -> bool + '_ {
    move |id| sel.as_ref().is_none_or(|(s, w)| s.split_of(id) == Some(*w))
}

pub fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let spec = SynthSpec {
        class_count: a.classes,
        images_per_class: a.images_per_class,
        subject_count: a.subjects,
        channel_count: a.channels,
        sample_rate_hz: a.sample_rate_hz,
        duration_ms: a.duration_ms,
        components_per_class: a.components,
        amplitude: a.amplitude,
        noise_sigma: a.noise_sigma,
        subject_jitter: a.subject_jitter,
        mode: match a.mode {
            ModeArg::Oscillatory => SignatureMode::Oscillatory,
            ModeArg::Transient => SignatureMode::Transient {
                onset_ms: a.onset_ms,
                decay_ms: a.decay_ms,
            },
        },
        feature_noise: a.feature_noise,
        seed,
    };
    let (ds, truth) = generate_dataset(&spec).map_err(at(Stage::Load))?;
    let images = generate_image_features(&spec, a.feature_dim).map_err(at(Stage::Load))?;
    fs::create_dir_all(&a.out).map_err(|e| fail(Stage::Write, format!("{}: {e}", a.out.display())))?;
    write_eeg_file(&a.out.join("eeg.bfeeg"), ds.sequences()).map_err(at(Stage::Write))?;
    if a.csv {
        write_eeg_csv(&a.out.join("eeg.csv"), ds.sequences()).map_err(at(Stage::Write))?;
    }
    write_image_features(&a.out.join("images.bfimf"), &images).map_err(at(Stage::Write))?;
    write_file(&a.out.join("labels.csv"), labels_text(&ds).as_bytes())?;
    write_file(&a.out.join("ground_truth.txt"), truth.to_text().as_bytes())?;
    println!(
        "wrote {} recordings of {} images ({} classes, {} subjects) to {}",
        ds.len(),
        images.len(),
        a.classes,
        a.subjects,
        a.out.display()
    );
    Ok(())
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let notch = parse_band(&a.notch).map_err(|e| fail(Stage::Preprocess, format!("--notch: {e}")))?;
    let bandpass = parse_band(&a.bandpass)
        .map_err(|e| fail(Stage::Preprocess, format!("--bandpass: {e}")))?
        .map(|(lo, hi)| (a.bandpass_order, lo, hi));
    let ds = load(&a.input, &a.load)?;
    let spec = PreprocessSpec { notch, bandpass };
    let filtered = ds.map_sequences(|s| spec.apply(s)).map_err(at(Stage::Preprocess))?;
    write_eeg_file(&a.out, filtered.sequences()).map_err(at(Stage::Write))?;
    if let Some(p) = &a.labels_out {
        write_file(p, labels_text(&filtered).as_bytes())?;
    }
    println!("filtered {} recordings into {}", filtered.len(), a.out.display());
    Ok(())
}

fn windowed(ds: &Dataset, window: &str) -> Result<(TimeWindow, Dataset)> {
    let w: TimeWindow = parse(Stage::Window, "window", window)?;
    let out = ds.map_sequences(|s| window_sequence(s, &w)).map_err(at(Stage::Window))?;
    Ok((w, out))
}

pub fn train_encoder(a: &TrainArgs, seed: u64) -> Result<()> {
    let layout: EncoderLayout = parse(Stage::Train, "layout", &a.layout)?;
    let ds = load(&a.input, &a.load)?;
    let split = match &a.split {
        Some(p) => read_split(p)?,
        None => {
            let f: Vec<f64> = a
                .split_fractions
                .split(',')
                .map(|v| parse(Stage::Split, "split-fractions", v.trim()))
                .collect::<Result<_>>()?;
            let f: [f64; 3] = f.try_into().map_err(|_| fail(Stage::Split, "--split-fractions needs three values"))?;
            split_dataset(&ds, f, seed).map_err(at(Stage::Split))?
        }
    };
    let (window, input) = windowed(&ds, &a.window)?;
    let mut cfg = EncoderConfig::new(layout, ds.sequences()[0].channels(), ds.class_count);
    cfg.normalize = !a.no_normalize;
    let hyper = TrainHyper {
        learning_rate: a.lr,
        momentum: a.momentum,
        batch_size: a.batch,
        epochs: a.epochs,
    };
    let (model, history) = fit_encoder(&input, &split, &cfg, &hyper, seed).map_err(at(Stage::Train))?;
    model.save(&a.out).map_err(at(Stage::Write))?;
    write_file(&sibling(&a.out, "history.csv"), history.to_text().as_bytes())?;
    if a.split.is_none() {
        write_file(&sibling(&a.out, "split.txt"), split.to_text().as_bytes())?;
    }
    let acc = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
    println!(
        "{} on {window} ms: kept epoch {}, validation accuracy {}, test accuracy {}",
        model.config.layout,
        history.best().epoch,
        acc(history.max_val_acc()),
        acc(history.test_acc_at_best())
    );
    Ok(())
}

pub fn extract_features(a: &ExtractArgs) -> Result<()> {
    let model = EncoderModel::load(&a.model).map_err(at(Stage::Load))?;
    let ds = load(&a.input, &a.load)?;
    let sel = subset(&a.subset, Split::Train)?;
    let ds = match &sel {
        Some((split, which)) => split_subset(&ds, split, *which)?,
        None => ds,
    };
    let (_, input) = windowed(&ds, &a.window)?;
    let table = encode_all(&model, &input).map_err(at(Stage::Extract))?;
    table.save(&a.out).map_err(at(Stage::Write))?;
    println!("extracted {} vectors of dimension {} for {} images", table.vector_count(), table.dim(), table.len());
    Ok(())
}

pub fn aggregate(a: &AggregateArgs) -> Result<()> {
    let how: Aggregation = parse(Stage::Aggregate, "how", &a.how)?;
    if how == Aggregation::None {
        return Err(fail(Stage::Aggregate, "--how must be average or best"));
    }
    let table = FeatureTable::load(&a.input).map_err(at(Stage::Load))?;
    let out = reduce(&table, how).map_err(at(Stage::Aggregate))?;
    out.save(&a.out).map_err(at(Stage::Write))?;
    if let Some(p) = &a.export_images {
        let images = out.to_image_features().map_err(at(Stage::Aggregate))?;
        write_image_features(p, &images).map_err(at(Stage::Write))?;
    }
    println!("aggregated {} images by {how}", out.len());
    Ok(())
}

/// Image ids with their (image feature, EEG target) pairs.
type Pairs = (Vec<u32>, Vec<Vec<f64>>, Vec<Vec<f64>>);

fn regression_inputs(images: &Path, targets: &Path, sel: &Option<(SplitAssignment, Split)>) -> Result<Pairs> {
    let images = read_image_features(images).map_err(at(Stage::Load))?;
    let table = FeatureTable::load(targets).map_err(at(Stage::Load))?;
    if table.aggregation() == Aggregation::None {
        return Err(fail(Stage::Regress, "targets must be aggregated first"));
    }
    let pairs = regression_pairs(&images, &table.restrict(keep_fn(sel)));
    if pairs.0.is_empty() {
        return Err(fail(Stage::Regress, "no images with both image features and EEG features"));
    }
    Ok(pairs)
}

pub fn fit_regressor(a: &FitArgs) -> Result<()> {
    let spec: RegressorSpec = parse(Stage::Regress, "regressor", &a.regressor)?;
    let sel = subset(&a.subset, Split::Train)?;
    let (_, xs, ys) = regression_inputs(&a.images, &a.targets, &sel)?;
    let model = spec.fit(&xs, &ys).map_err(at(Stage::Regress))?;
    let fit = evaluate_mse(&model, &xs, &ys, xs.len()).map_err(at(Stage::Regress))?;
    model.save(&a.out).map_err(at(Stage::Write))?;
    println!("fitted {} on {} pairs: training mse {}", model.spec(), xs.len(), fit.mse);
    Ok(())
}

pub fn classify(a: &ClassifyArgs) -> Result<()> {
    let images = read_image_features(&a.images).map_err(at(Stage::Load))?;
    let reg = RegressorModel::load(&a.regressor).map_err(at(Stage::Load))?;
    let enc = EncoderModel::load(&a.encoder).map_err(at(Stage::Load))?;
    let labels = read_labels(&a.labels)?;
    let sel = subset(&a.subset, Split::Test)?;
    let keep = keep_fn(&sel);
    let mut rows = Vec::new();
    for (id, x) in images.iter().filter(|(id, _)| keep(*id)) {
        let true_class = *labels
            .get(&id)
            .ok_or_else(|| fail(Stage::Classify, format!("image {id} has no label")))?;
        let c = classify_image_features(&reg, &enc, x)?;
        rows.push(PredictionRow {
            image_id: id,
            true_class,
            predicted_class: c.class_id,
            max_prob: c.max_prob(),
        });
    }
    if rows.is_empty() {
        return Err(fail(Stage::Classify, "no images selected"));
    }
    write_file(&a.out, predictions_to_csv(&rows).as_bytes())?;
    println!("classified {} images: accuracy {:.4}", rows.len(), accuracy_of(&rows)?);
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let rows = predictions_from_csv(&read_text(&a.predictions, Stage::Evaluate)?)?;
    if let Some(p) = &a.labels {
        let labels = read_labels(p)?;
        for r in &rows {
            match labels.get(&r.image_id) {
                Some(&c) if c == r.true_class => {}
                Some(&c) => {
                    return Err(fail(
                        Stage::Evaluate,
                        format!("image {}: prediction file says class {}, labels say {c}", r.image_id, r.true_class),
                    ))
                }
                None => return Err(fail(Stage::Evaluate, format!("image {} has no label", r.image_id))),
            }
        }
    }
    let p: Vec<u32> = rows.iter().map(|r| r.predicted_class).collect();
    let l: Vec<u32> = rows.iter().map(|r| r.true_class).collect();
    println!("images {}", rows.len());
    println!("accuracy {}", accuracy_of(&rows)?);
    println!("mean_class_accuracy {}", mean_class_accuracy(&p, &l)?);
    Ok(())
}

pub fn experiment(a: &ExperimentArgs, seed: Option<u64>) -> Result<()> {
    if a.print_default_config {
        print!("{}", PipelineConfig::default_document());
        return Ok(());
    }
    let text = match &a.config {
        Some(p) => read_text(p, Stage::Load)?,
        None => String::new(),
    };
    let mut config = PipelineConfig::parse(&text, &a.overrides).map_err(|e| fail(Stage::Load, format!("config: {e}")))?;
    if let Some(s) = seed {
        config = config.with_seed(s);
    }
    if let Some(root) = &a.out_root {
        config.output_root = root.clone();
    }
    let dir = config.run_dir();
    // the saved copy leaves out output.root so run directories can move
    let resolved = format!("{}seed = {}\n", config.identity_text(), config.experiment.seed);
    if a.dry_run {
        println!("{}seed = {}", config.canonical_text(), config.experiment.seed);
        println!("# run directory: {}", dir.display());
        return Ok(());
    }
    config.experiment.validate()?;
    let run = run_experiment(&config.experiment);
    write_file(&dir.join("config.cfg"), resolved.as_bytes())?;
    run.write(&dir)?;
    for r in &run.report.encoders {
        let acc = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.3}"));
        println!("encoder {}: validation {} test {}", r.key, acc(r.max_val_acc), acc(r.test_acc_at_max_val));
    }
    for r in &run.report.regression {
        println!(
            "{} {} {}: mse {:.4} direct {:.3} end-to-end {:.3}",
            r.encoder, r.aggregation, r.regressor, r.mse, r.direct_accuracy, r.end_to_end_accuracy
        );
    }
    println!("wrote {}", dir.display());
    match run.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn dsp_probe(a: &ProbeArgs) -> Result<()> {
    let spec = match a.filter {
        FilterArg::Bandpass => IirFilterSpec::bandpass(a.order, a.low.unwrap_or(14.0), a.high.unwrap_or(71.0), a.fs),
        FilterArg::Notch => IirFilterSpec::notch(a.low.unwrap_or(49.0), a.high.unwrap_or(51.0), a.fs),
    };
    let freqs: Vec<f64> = a
        .freqs
        .split(',')
        .map(|f| parse(Stage::Preprocess, "freqs", f.trim()))
        .collect::<Result<_>>()?;
    let coeffs = design_filter(&spec).map_err(at(Stage::Preprocess))?;
    println!("# {} sections, max pole magnitude {}", coeffs.sections().len(), coeffs.max_pole_magnitude());
    println!("freq_hz,gain_db");
    for (f, g) in probe(&coeffs, a.fs, &freqs) {
        println!("{f},{g}");
    }
    Ok(())
}

pub fn grad_check(a: &GradCheckArgs, seed: u64) -> Result<()> {
    let h = a.hidden;
    let layout = match a.arch {
        ArchArg::Common => EncoderLayout::common(&[h]),
        ArchArg::ChannelCommon => EncoderLayout::channel_common(h.div_ceil(2), &[h]),
        ArchArg::CommonOutput => EncoderLayout::common_output(&[h], h),
    };
    let instance = CheckInstance::new(layout, a.channels, a.classes, a.steps, seed).map_err(at(Stage::Train))?;
    let r = instance.check(a.eps).map_err(at(Stage::Train))?;
    println!(
        "max relative error {:e} at {}[{}] over {} parameters (analytic {:e}, numeric {:e})",
        r.max_rel_error, r.worst.0, r.worst.1, r.parameters, r.analytic, r.numeric
    );
    if r.max_rel_error >= a.tolerance {
        return Err(fail(
            Stage::Train,
            format!("gradient check failed: {:e} >= {:e}", r.max_rel_error, a.tolerance),
        ));
    }
    Ok(())
}
