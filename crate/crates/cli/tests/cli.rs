use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use brainfold_cli::config::PipelineConfig;
use brainfold_cli::{Cli, Command as Sub};
use brainfold_core::synth::SynthSpec;
use clap::Parser;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_brainfold"));
    c.env("BRAINFOLD_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?}\n{}\n{}", stdout(&o), stderr(&o));
    stdout(&o)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn help_lists_every_flag_with_its_default() {
    let expect: &[(&str, &[&str])] = &[
        ("synth", &["--out", "--classes", "[default: 8]", "--images-per-class", "[default: 20]", "--noise-sigma", "--mode", "[default: oscillatory]", "--onset-ms", "--decay-ms", "--feature-dim", "[default: 64]", "--csv"]),
        ("preprocess", &["--input", "--out", "--notch", "[default: 49-51]", "--bandpass", "[default: 14-71]", "--bandpass-order", "--labels-out", "--channels", "--amplitude-threshold", "[default: 100]"]),
        ("train-encoder", &["--layout", "[default: \"32 common, 32 output\"]", "--window", "[default: 40-480]", "--epochs", "[default: 50]", "--lr", "[default: 0.01]", "--momentum", "[default: 0.9]", "--batch", "[default: 16]", "--split-fractions", "[default: 0.7,0.15,0.15]", "--split", "--no-normalize", "--seed", "--threads", "BRAINFOLD_THREADS"]),
        ("extract-features", &["--model", "--window", "--split", "--subset"]),
        ("aggregate", &["--how", "[default: average]", "--export-images"]),
        ("fit-regressor", &["--images", "--targets", "--regressor", "[default: knn:k=5]"]),
        ("classify", &["--images", "--regressor", "--encoder", "--labels", "--out"]),
        ("evaluate", &["--predictions", "--labels"]),
        ("experiment", &["--config", "--set", "--out-root", "--dry-run", "--print-default-config"]),
        ("grad-check", &["--arch", "[default: common]", "--hidden", "--eps", "[default: 0.000001]", "--tolerance", "[default: 0.0001]"]),
    ];
    for (sub, flags) in expect {
        let out = ok(&[sub, "--help"]);
        for f in *flags {
            assert!(out.contains(f), "{sub} --help lacks {f}:\n{out}");
        }
    }
    let out = ok(&["dsp", "probe", "--help"]);
    for f in ["--filter", "[default: bandpass]", "--order", "--low", "--high", "--fs", "[default: 250]", "--freqs"] {
        assert!(out.contains(f), "dsp probe --help lacks {f}");
    }
    assert!(ok(&["--version"]).starts_with("brainfold "));
}

#[test]
fn synth_flag_defaults_match_the_library() {
    let cli = Cli::try_parse_from(["brainfold", "synth", "--out", "x"]).unwrap();
    let Sub::Synth(a) = cli.command else { panic!() };
    let d = SynthSpec::default();
    assert_eq!(
        (a.classes, a.images_per_class, a.subjects, a.channels, a.components),
        (d.class_count, d.images_per_class, d.subject_count, d.channel_count, d.components_per_class)
    );
    assert_eq!(
        (a.sample_rate_hz, a.duration_ms, a.amplitude, a.noise_sigma, a.subject_jitter, a.feature_noise),
        (d.sample_rate_hz, d.duration_ms, d.amplitude, d.noise_sigma, d.subject_jitter, d.feature_noise)
    );
}

#[test]
fn exit_codes_separate_usage_and_stage_failures() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["synth"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["grad-check", "--arch", "lstm"]).status.code(), Some(1));
    let o = run(&["preprocess", "--input", "/nonexistent/eeg.bfeeg", "--out", "/tmp/x.bfeeg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: load:"), "{}", stderr(&o));
    let o = run(&["experiment", "--set", "train.epochs=lots"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.epochs"));
}

#[test]
fn staged_commands_chain_and_evaluate_checks_labels() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |n: &str| d.join(n);
    ok(&["synth", "--out", s(d), "--noise-sigma", "5", "--feature-dim", "8", "--images-per-class", "10", "--channels", "4"]);
    for f in ["eeg.bfeeg", "images.bfimf", "labels.csv", "ground_truth.txt"] {
        assert!(p(f).exists(), "{f}");
    }
    ok(&["preprocess", "--input", s(&p("eeg.bfeeg")), "--out", s(&p("pre.bfeeg")), "--labels-out", s(&p("kept.csv"))]);
    assert_eq!(std::fs::read(p("labels.csv")).unwrap(), std::fs::read(p("kept.csv")).unwrap());
    let (pre, enc) = (p("pre.bfeeg"), p("enc.bfenc"));
    let train = ["train-encoder", "--input", s(&pre), "--out", s(&enc), "--layout", "8 common", "--epochs", "2", "--split-fractions", "0.6,0.2,0.2"];
    ok(&train);
    assert!(p("enc.history.csv").exists() && p("enc.split.txt").exists());
    let split = p("enc.split.txt");
    ok(&["extract-features", "--input", s(&p("pre.bfeeg")), "--model", s(&p("enc.bfenc")), "--out", s(&p("train.bfeft")), "--split", s(&split), "--subset", "train"]);
    ok(&["aggregate", "--input", s(&p("train.bfeft")), "--how", "best", "--out", s(&p("train_best.bfeft")), "--export-images", s(&p("eeg_feats.bfimf"))]);
    let fit = ok(&["fit-regressor", "--images", s(&p("images.bfimf")), "--targets", s(&p("train_best.bfeft")), "--regressor", "ridge:lambda=0.5", "--out", s(&p("r.bfreg")), "--split", s(&split)]);
    assert!(fit.contains("ridge:lambda=0.5 on 48 pairs"), "{fit}");
    let cls = ok(&["classify", "--images", s(&p("images.bfimf")), "--regressor", s(&p("r.bfreg")), "--encoder", s(&p("enc.bfenc")), "--labels", s(&p("labels.csv")), "--out", s(&p("preds.csv")), "--split", s(&split)]);
    assert!(cls.starts_with("classified 16 images"), "{cls}");
    let eval = ok(&["evaluate", "--predictions", s(&p("preds.csv")), "--labels", s(&p("labels.csv"))]);
    let acc = eval.lines().find_map(|l| l.strip_prefix("accuracy ")).unwrap();
    let reported: f64 = cls.trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!((acc.parse::<f64>().unwrap() - reported).abs() < 5e-5);

    // a label file that disagrees with the predictions
    let text = std::fs::read_to_string(p("labels.csv")).unwrap();
    let flipped: String = text
        .lines()
        .enumerate()
        .map(|(i, l)| match (i, l.split_once(',')) {
            (i, Some((id, c))) if i > 0 => format!("{id},{}\n", (c.parse::<u32>().unwrap() + 1) % 8),
            _ => format!("{l}\n"),
        })
        .collect();
    std::fs::write(p("wrong.csv"), flipped).unwrap();
    let o = run(&["evaluate", "--predictions", s(&p("preds.csv")), "--labels", s(&p("wrong.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: evaluate:"), "{}", stderr(&o));

    // retraining with the same seed reproduces the model
    let first = std::fs::read(p("enc.bfenc")).unwrap();
    ok(&train);
    assert_eq!(first, std::fs::read(p("enc.bfenc")).unwrap());
}

#[test]
fn experiment_run_directory_is_keyed_by_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("runs");
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(
        &cfg,
        "synth.noise_sigma = 5\nsynth.feature_dim = 8\nsynth.images_per_class = 10\nsynth.channels = 4\nsplit.fractions = 0.6, 0.2, 0.2\n\
         encoder.layouts = 8 common\ntrain.epochs = 1\nwindows = 40-480\naggregation = average\nregressors = knn:k=1\n",
    )
    .unwrap();
    let out = ok(&["experiment", "--config", s(&cfg), "--out-root", s(&root), "--seed", "4"]);
    let config = PipelineConfig::parse(&std::fs::read_to_string(&cfg).unwrap(), &[]).unwrap();
    let mut expected = config.with_seed(4);
    expected.output_root = root.clone();
    let run_dir = expected.run_dir();
    assert!(out.contains(s(&run_dir)), "{out}");
    assert!(run_dir.file_name().unwrap().to_str().unwrap().ends_with("-s4"));
    for f in ["config.cfg", "report.json", "regression.csv", "end_to_end.csv", "split.txt"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    // the saved config reproduces the directory name
    let saved = PipelineConfig::parse(&std::fs::read_to_string(run_dir.join("config.cfg")).unwrap(), &[]).unwrap();
    assert_eq!(saved.hash(), expected.hash());
    assert_eq!(saved.experiment.seed, 4);
}

#[test]
fn shipped_configs_parse() {
    let mut n = 0;
    for e in std::fs::read_dir(configs_dir()).unwrap() {
        let path = e.unwrap().path();
        if path.extension().is_some_and(|x| x == "cfg") {
            let out = ok(&["experiment", "--config", s(&path), "--dry-run"]);
            assert!(out.contains("# run directory:"));
            n += 1;
        }
    }
    assert!(n >= 4);
    let default = std::fs::read_to_string(configs_dir().join("default.cfg")).unwrap();
    assert_eq!(default, PipelineConfig::default_document());
}
