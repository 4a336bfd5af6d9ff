//! Command-line driver for the brainfold pipeline.
//!
//! [`dispatch`] parses arguments and runs one subcommand. Exit codes: 0 on
//! success (including `--help` and `--version`), 1 on usage errors, 2 when a
//! stage fails. Stage failures print `error: <stage>: <message>`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use brainfold_core::pipeline::{PipelineError, Stage};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "brainfold", version, about = "EEG manifold learning and image-to-EEG regression")]
pub struct Cli {
    /// Root seed for splits, initialization, shuffling and synthesis [default: 0, or the config's seed]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; outputs do not depend on it [default: all cores]
    #[arg(long, global = true, env = "BRAINFOLD_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate recordings with known class signatures, image features and labels
    Synth(SynthArgs),
    /// Notch and band-pass filter a recording file
    Preprocess(PreprocessArgs),
    /// Train one encoder on a time window of a recording file
    TrainEncoder(TrainArgs),
    /// Encode every recording into a per-subject feature table
    ExtractFeatures(ExtractArgs),
    /// Reduce a feature table to one vector per image
    Aggregate(AggregateArgs),
    /// Fit an image-feature to EEG-feature regressor
    FitRegressor(FitArgs),
    /// Classify images through a regressor and an encoder's softmax head
    Classify(ClassifyArgs),
    /// Score a prediction file
    Evaluate(EvaluateArgs),
    /// Run a whole configured grid and write its report
    Experiment(ExperimentArgs),
    /// Filter design utilities
    Dsp {
        #[command(subcommand)]
        command: DspCommand,
    },
    /// Compare analytic and finite-difference gradients of a random encoder
    GradCheck(GradCheckArgs),
}

/// How recording files are validated on load. Counts default to what the
/// file contains.
#[derive(Debug, Clone, Args)]
pub struct LoadArgs {
    /// Expected channel count [default: from the file header]
    #[arg(long)]
    pub channels: Option<usize>,
    /// Number of classes [default: largest class id + 1]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Number of subjects [default: largest subject id + 1]
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Recordings whose peak absolute amplitude exceeds this are dropped
    #[arg(long, default_value_t = 100.0)]
    pub amplitude_threshold: f64,
    /// Minimum samples per recording
    #[arg(long, default_value_t = 120)]
    pub min_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Oscillatory,
    Transient,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub images_per_class: usize,
    #[arg(long, default_value_t = 3)]
    pub subjects: usize,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long, default_value_t = 250.0)]
    pub sample_rate_hz: f64,
    #[arg(long, default_value_t = 500.0)]
    pub duration_ms: f64,
    /// Sinusoidal components per class signature
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    /// Peak amplitude of each component
    #[arg(long, default_value_t = 10.0)]
    pub amplitude: f64,
    /// Standard deviation of the additive white noise
    #[arg(long, default_value_t = 10.0)]
    pub noise_sigma: f64,
    /// Relative per-subject amplitude and phase jitter
    #[arg(long, default_value_t = 0.1)]
    pub subject_jitter: f64,
    /// Standard deviation of the image-feature perturbation
    #[arg(long, default_value_t = 0.3)]
    pub feature_noise: f64,
    /// Image-feature dimension
    #[arg(long, default_value_t = 64)]
    pub feature_dim: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Oscillatory)]
    pub mode: ModeArg,
    /// Transient onset (transient mode)
    #[arg(long, default_value_t = 320.0)]
    pub onset_ms: f64,
    /// Transient decay constant (transient mode)
    #[arg(long, default_value_t = 150.0)]
    pub decay_ms: f64,
    /// Also write the recordings as eeg.csv
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessArgs {
    /// Recording file (binary or CSV)
    #[arg(long)]
    pub input: PathBuf,
    /// Filtered recording file
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub load: LoadArgs,
    /// Notch band LO-HI in Hz, or off
    #[arg(long, default_value = "49-51")]
    pub notch: String,
    /// Band-pass LO-HI in Hz, or off
    #[arg(long, default_value = "14-71")]
    pub bandpass: String,
    /// Butterworth order of the band-pass
    #[arg(long, default_value_t = 2)]
    pub bandpass_order: usize,
    /// Also write `image_id,class_id` labels of the kept recordings
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Preprocessed recording file
    #[arg(long)]
    pub input: PathBuf,
    /// Model file; the history and split are written next to it
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub load: LoadArgs,
    /// Encoder layout, e.g. "32 common", "4 channel, 32 common", "32 common, 32 output"
    #[arg(long, default_value = "32 common, 32 output")]
    pub layout: String,
    /// Time window START-END in ms
    #[arg(long, default_value = "40-480")]
    pub window: String,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Train, validation and test fractions of each class's images
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub split_fractions: String,
    /// Reuse an existing split file instead of drawing one
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Feed raw windows to the encoder without per-channel standardization
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SubsetArgs {
    /// Split file written by train-encoder
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Restrict to one split (train, val or test); needs --split
    #[arg(long, requires = "split")]
    pub subset: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Encoder model file
    #[arg(long)]
    pub model: PathBuf,
    /// Feature table file
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub load: LoadArgs,
    /// Time window START-END in ms; must match training
    #[arg(long, default_value = "40-480")]
    pub window: String,
    #[command(flatten)]
    pub subset: SubsetArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AggregateArgs {
    /// Per-subject feature table
    #[arg(long)]
    pub input: PathBuf,
    /// average or best
    #[arg(long, default_value = "average")]
    pub how: String,
    /// Aggregated feature table
    #[arg(long)]
    pub out: PathBuf,
    /// Also export the aggregated vectors as an image-feature file
    #[arg(long)]
    pub export_images: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Image-feature file
    #[arg(long)]
    pub images: PathBuf,
    /// Aggregated EEG feature table
    #[arg(long)]
    pub targets: PathBuf,
    /// Regressor, e.g. knn:k=5, ridge:lambda=1, random_forest:trees=100
    #[arg(long, default_value = "knn:k=5")]
    pub regressor: String,
    /// Regressor model file
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub subset: SubsetArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ClassifyArgs {
    /// Image-feature file
    #[arg(long)]
    pub images: PathBuf,
    /// Regressor model file
    #[arg(long)]
    pub regressor: PathBuf,
    /// Encoder model file
    #[arg(long)]
    pub encoder: PathBuf,
    /// `image_id,class_id` labels
    #[arg(long)]
    pub labels: PathBuf,
    /// Prediction CSV
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub subset: SubsetArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Prediction CSV
    #[arg(long)]
    pub predictions: PathBuf,
    /// Check the recorded true classes against these labels
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// Configuration file [default: built-in defaults]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. --set train.epochs=5 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Parent of the run directory [default: output.root of the config]
    #[arg(long)]
    pub out_root: Option<PathBuf>,
    /// Print the resolved configuration and run directory without running
    #[arg(long)]
    pub dry_run: bool,
    /// Print every configuration key with its default and exit
    #[arg(long)]
    pub print_default_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum DspCommand {
    /// Print the gain of a designed filter at chosen frequencies
    Probe(ProbeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    Bandpass,
    Notch,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    #[arg(long, value_enum, default_value_t = FilterArg::Bandpass)]
    pub filter: FilterArg,
    /// Butterworth order (band-pass only)
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// Lower edge in Hz [default: 14 band-pass, 49 notch]
    #[arg(long)]
    pub low: Option<f64>,
    /// Upper edge in Hz [default: 71 band-pass, 51 notch]
    #[arg(long)]
    pub high: Option<f64>,
    #[arg(long, default_value_t = 250.0)]
    pub fs: f64,
    /// Comma-separated probe frequencies in Hz
    #[arg(long, default_value = "0,5,14,30,49,50,51,71,100,124")]
    pub freqs: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ArchArg {
    Common,
    ChannelCommon,
    CommonOutput,
}

#[derive(Debug, Clone, Args)]
pub struct GradCheckArgs {
    #[arg(long, value_enum, default_value_t = ArchArg::Common)]
    pub arch: ArchArg,
    /// Units per recurrent layer
    #[arg(long, default_value_t = 6)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Time steps of the random input
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Largest relative error accepted
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Runs a parsed command on a pool of `--threads` workers.
pub fn run(cli: Cli) -> Result<(), PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(brainfold_core::pipeline::at(Stage::Load))?;
    let seed = cli.seed;
    pool.install(|| match cli.command {
        Command::Synth(a) => commands::synth(&a, seed.unwrap_or(0)),
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::TrainEncoder(a) => commands::train_encoder(&a, seed.unwrap_or(0)),
        Command::ExtractFeatures(a) => commands::extract_features(&a),
        Command::Aggregate(a) => commands::aggregate(&a),
        Command::FitRegressor(a) => commands::fit_regressor(&a),
        Command::Classify(a) => commands::classify(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Experiment(a) => commands::experiment(&a, seed),
        Command::Dsp {
            command: DspCommand::Probe(a),
        } => commands::dsp_probe(&a),
        Command::GradCheck(a) => commands::grad_check(&a, seed.unwrap_or(0)),
    })
}
