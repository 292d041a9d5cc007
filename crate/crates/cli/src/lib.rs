//! `nsb` command line: dataset generation, training, evaluation,
//! single-slice segmentation, stimulus preparation and the rating server.
//!
//! Every failure ends the process with a distinct exit code and one JSON
//! line `{"error": ..., "message": ...}` on stderr.

pub mod server;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use nsb_core::classifier::{self, TrainConfig};
use nsb_core::dataset::{self, DatasetConfig, MANIFEST_FILE};
use nsb_core::dsis::{PlanConfig, RatingStore, StimulusPool, SystemClock};
use nsb_core::evaluate::{self, OraclePipeline, Pipeline, TrainedPipeline};
use nsb_core::image::{read_image, write_image};
use nsb_core::localizer::{detector, map_box_to_network, DetectorTrainConfig, DetectorWeights};
use nsb_core::segment::render_overlay;
use nsb_core::stimuli::{build_stimulus_pool, StimuliConfig};
use nsb_core::{ClassifierWeights, DatasetManifest, Sample};

pub const CLASSIFIER_FILE: &str = "classifier.nsb";
pub const DETECTOR_FILE: &str = "detector.nsb";
pub const DATA_DIR_ENV: &str = "NSB_DATA_DIR";

pub mod exit {
    pub const OK: i32 = 0;
    pub const BAD_ARGUMENT: i32 = 2;
    pub const UNKNOWN_SUBCOMMAND: i32 = 3;
    pub const MISSING_ARGUMENT: i32 = 4;
    pub const INPUT: i32 = 5;
    pub const TRAINING: i32 = 6;
    pub const IO: i32 = 7;
    pub const SERVER: i32 = 8;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    BadArgument(String),
    #[error("{0}")]
    UnknownSubcommand(String),
    #[error("{0}")]
    MissingArgument(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Training(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Server(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadArgument(_) => exit::BAD_ARGUMENT,
            CliError::UnknownSubcommand(_) => exit::UNKNOWN_SUBCOMMAND,
            CliError::MissingArgument(_) => exit::MISSING_ARGUMENT,
            CliError::Input(_) => exit::INPUT,
            CliError::Training(_) => exit::TRAINING,
            CliError::Io(_) => exit::IO,
            CliError::Server(_) => exit::SERVER,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::BadArgument(_) => "bad_argument",
            CliError::UnknownSubcommand(_) => "unknown_subcommand",
            CliError::MissingArgument(_) => "missing_argument",
            CliError::Input(_) => "input",
            CliError::Training(_) => "training",
            CliError::Io(_) => "io",
            CliError::Server(_) => "server",
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn training(e: impl std::fmt::Display) -> CliError {
    CliError::Training(e.to_string())
}

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "nsb", version, about = "Brain tumor phantom classification, localization and segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled phantom dataset with a manifest.
    GenData(GenDataArgs),
    /// Train the tumor-type classifier.
    TrainClassifier(TrainArgs),
    /// Train the tumor localizer.
    TrainDetector(TrainArgs),
    /// Run the full pipeline on a dataset and report metrics.
    Evaluate(EvaluateArgs),
    /// Segment one 512x512 slice.
    Segment(SegmentArgs),
    /// Prepare a DSIS stimulus pool with genuine and decoy overlays.
    MakeStimuli(MakeStimuliArgs),
    /// Serve the DSIS rating API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Slices per class.
    #[arg(long = "n-per-class", visible_alias = "n", default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    n_per_class: u64,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, env = DATA_DIR_ENV)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FoldArgs {
    /// Restrict to the training part of this fold (with --folds).
    #[arg(long, requires = "folds")]
    fold: Option<usize>,
    #[arg(long, requires = "fold")]
    folds: Option<usize>,
    /// Seed of the fold split.
    #[arg(long, default_value_t = 1)]
    split_seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Manifest file or dataset directory.
    #[arg(long, env = DATA_DIR_ENV)]
    manifest: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory for the weights file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    fold: FoldArgs,
}

#[derive(Debug, Args)]
struct WeightsArgs {
    /// Directory holding classifier.nsb and detector.nsb.
    #[arg(long, required_unless_present = "oracle")]
    weights: Option<PathBuf>,
    /// Use ground truth instead of trained networks.
    #[arg(long, conflicts_with = "weights")]
    oracle: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, env = DATA_DIR_ENV)]
    manifest: PathBuf,
    #[command(flatten)]
    weights: WeightsArgs,
    #[arg(long)]
    out: PathBuf,
    /// Evaluate only the held-out part of this fold (with --folds).
    #[arg(long, requires = "folds")]
    fold: Option<usize>,
    #[arg(long, requires = "fold")]
    folds: Option<usize>,
    #[arg(long, default_value_t = 1)]
    split_seed: u64,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    /// 512x512 binary PGM slice.
    image: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MakeStimuliArgs {
    #[arg(long, env = DATA_DIR_ENV)]
    manifest: PathBuf,
    #[command(flatten)]
    weights: WeightsArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Genuine stimuli per class.
    #[arg(long, default_value_t = 12)]
    genuine: usize,
    /// Decoy stimuli per class.
    #[arg(long, default_value_t = 3)]
    decoys: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Stimulus pool directory (with stimuli.csv).
    #[arg(long)]
    stimuli: PathBuf,
    /// Rating store directory.
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value_t = nsb_core::dsis::DEFAULT_DECOYS_PER_CLASS)]
    decoys_per_class: usize,
}

/// Runs the CLI with explicit arguments (the first is the program name) and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut stdout = std::io::stdout().lock();
    let result = match parse(args) {
        Ok(Some(cmd)) => dispatch(cmd, &mut stdout),
        Ok(None) => Ok(()),
        Err(e) => Err(e),
    };
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

/// `Ok(None)` when help or version was printed.
fn parse<I, T>(args: I) -> Result<Option<Command>, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => Ok(Some(cli.command)),
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return Ok(None);
            }
            let msg = first_line(&e.to_string());
            Err(match e.kind() {
                ErrorKind::InvalidSubcommand => CliError::UnknownSubcommand(msg),
                ErrorKind::MissingRequiredArgument
                | ErrorKind::MissingSubcommand
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => CliError::MissingArgument(msg),
                _ => CliError::BadArgument(msg),
            })
        }
    }
}

fn first_line(s: &str) -> String {
    s.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim_start_matches("error: ").trim().to_string()
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::GenData(a) => gen_data(a, out),
        Command::TrainClassifier(a) => train_classifier(a, out),
        Command::TrainDetector(a) => train_detector(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Segment(a) => segment(a, out),
        Command::MakeStimuli(a) => make_stimuli(a, out),
        Command::Serve(a) => serve(a, out),
    }
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(io)?;
    writeln!(out, "{line}").map_err(io)
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = dataset::build_dataset(a.n_per_class as usize, a.seed, &a.out, &DatasetConfig::default())
        .map_err(|e| match e {
            dataset::DatasetError::Io { .. } => io(e),
            _ => input(e),
        })?;
    print_json(
        out,
        &serde_json::json!({
            "images": manifest.entries.len(),
            "manifest": a.out.join(MANIFEST_FILE),
        }),
    )
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_manifest(p: &Path) -> Result<DatasetManifest, CliError> {
    DatasetManifest::load(manifest_path(p)).map_err(input)
}

/// Indices selected by an optional fold: the training part when `train`,
/// else the held-out part. All indices without a fold.
fn fold_indices(
    manifest: &DatasetManifest,
    fold: Option<usize>,
    folds: Option<usize>,
    split_seed: u64,
    train: bool,
) -> Result<Vec<usize>, CliError> {
    match (fold, folds) {
        (Some(f), Some(k)) => {
            if f >= k {
                return Err(CliError::BadArgument(format!("--fold {f} must be below --folds {k}")));
            }
            let split = dataset::kfold_manifest(manifest, k, split_seed).map_err(|e| CliError::BadArgument(e.to_string()))?;
            let fold = &split[f];
            Ok(if train { fold.train.clone() } else { fold.test.clone() })
        }
        _ => Ok((0..manifest.entries.len()).collect()),
    }
}

fn load_selected(manifest: &DatasetManifest, idx: &[usize]) -> Result<Vec<Sample>, CliError> {
    idx.iter().map(|&i| manifest.load_sample(&manifest.entries[i]).map_err(input)).collect()
}

fn check_hyper(a: &TrainArgs) -> Result<(), CliError> {
    if a.epochs == Some(0) || a.batch == Some(0) {
        return Err(CliError::BadArgument("--epochs and --batch must be positive".into()));
    }
    if let Some(lr) = a.lr {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(CliError::BadArgument(format!("--lr must be positive, got {lr}")));
        }
    }
    Ok(())
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

#[derive(Serialize)]
struct TrainReport<'a> {
    weights: PathBuf,
    images: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_loss: Option<f64>,
    epoch_losses: &'a [f64],
}

fn train_classifier(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_hyper(&a)?;
    let manifest = load_manifest(&a.manifest)?;
    let idx = fold_indices(&manifest, a.fold.fold, a.fold.folds, a.fold.split_seed, true)?;
    let samples = load_selected(&manifest, &idx)?;
    let data = samples
        .iter()
        .map(|s| Ok((evaluate::network_input(&s.image).map_err(input)?, s.class)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        batch_size: a.batch.unwrap_or(d.batch_size),
        seed: a.seed,
        ..d
    };
    let outcome = classifier::train_classifier(&data, &cfg).map_err(training)?;
    create_out(&a.out)?;
    let path = a.out.join(CLASSIFIER_FILE);
    outcome.weights.save(&path).map_err(io)?;
    print_json(
        out,
        &TrainReport {
            weights: path,
            images: data.len(),
            initial_loss: Some(outcome.initial_loss),
            final_loss: Some(outcome.final_loss),
            epoch_losses: &outcome.epoch_losses,
        },
    )
}

fn train_detector(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_hyper(&a)?;
    let manifest = load_manifest(&a.manifest)?;
    let idx = fold_indices(&manifest, a.fold.fold, a.fold.folds, a.fold.split_seed, true)?;
    let samples = load_selected(&manifest, &idx)?;
    let data = samples
        .iter()
        .map(|s| Ok((evaluate::network_input(&s.image).map_err(input)?, map_box_to_network(&s.bbox))))
        .collect::<Result<Vec<_>, CliError>>()?;
    let d = DetectorTrainConfig::default();
    let cfg = DetectorTrainConfig {
        epochs: a.epochs.unwrap_or(d.epochs),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        batch_size: a.batch.unwrap_or(d.batch_size),
        seed: a.seed,
        ..d
    };
    let outcome = detector::train_detector(&data, &cfg).map_err(training)?;
    create_out(&a.out)?;
    let path = a.out.join(DETECTOR_FILE);
    outcome.weights.save(&path).map_err(io)?;
    print_json(
        out,
        &TrainReport {
            weights: path,
            images: data.len(),
            initial_loss: None,
            final_loss: None,
            epoch_losses: &outcome.epoch_losses,
        },
    )
}

fn load_pipeline(dir: &Path) -> Result<TrainedPipeline, CliError> {
    let c = ClassifierWeights::load(dir.join(CLASSIFIER_FILE)).map_err(input)?;
    let d = DetectorWeights::load(dir.join(DETECTOR_FILE)).map_err(input)?;
    TrainedPipeline::new(c, d).map_err(input)
}

fn pipeline_for(w: &WeightsArgs) -> Result<Box<dyn Pipeline>, CliError> {
    match (&w.weights, w.oracle) {
        (_, true) => Ok(Box::new(OraclePipeline)),
        (Some(dir), false) => Ok(Box::new(load_pipeline(dir)?)),
        (None, false) => Err(CliError::MissingArgument("--weights or --oracle is required".into())),
    }
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let pipeline = pipeline_for(&a.weights)?;
    let manifest = load_manifest(&a.manifest)?;
    let idx = fold_indices(&manifest, a.fold, a.folds, a.split_seed, false)?;
    let samples = load_selected(&manifest, &idx)?;
    let (rows, report) = evaluate::evaluate_samples(&samples, pipeline.as_ref()).map_err(input)?;
    create_out(&a.out)?;
    let mut csv = Vec::new();
    evaluate::write_rows_csv(&rows, &mut csv).map_err(io)?;
    let text = evaluate::format_summary(&report);
    let json = serde_json::to_string_pretty(&report).map_err(io)?;
    for (name, bytes) in [("per_image.csv", csv), ("summary.txt", text.clone().into_bytes()), ("summary.json", json.into_bytes())] {
        let p = a.out.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    }
    write!(out, "{text}").map_err(io)
}

fn segment(a: SegmentArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let pipeline = load_pipeline(&a.weights)?;
    let img = read_image(&a.image).map_err(input)?;
    let result = pipeline.run(&img).map_err(input)?;
    create_out(&a.out)?;
    let mask_path = a.out.join("mask.pgm");
    let overlay_path = a.out.join("overlay.pgm");
    write_image(&result.mask.to_gray(), &mask_path).map_err(io)?;
    write_image(&render_overlay(&img, &result.boundary), &overlay_path).map_err(io)?;
    let report = serde_json::json!({
        "class": result.classification.label.name(),
        "probabilities": result.classification.probabilities,
        "bbox": result.detection.map(|d| d.bbox),
        "confidence": result.detection.map(|d| d.confidence),
        "mask_pixels": result.mask.count(),
        "mask": mask_path,
        "overlay": overlay_path,
    });
    fs::write(a.out.join("result.json"), serde_json::to_vec_pretty(&report).map_err(io)?).map_err(io)?;
    print_json(out, &report)
}

fn make_stimuli(a: MakeStimuliArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.genuine == 0 || a.decoys == 0 {
        return Err(CliError::BadArgument("--genuine and --decoys must be positive".into()));
    }
    let pipeline = pipeline_for(&a.weights)?;
    let manifest = load_manifest(&a.manifest)?;
    let samples = manifest.load_samples().map_err(input)?;
    let cfg = StimuliConfig { genuine_per_class: a.genuine, decoys_per_class: a.decoys, seed: a.seed };
    let pool = build_stimulus_pool(&samples, pipeline.as_ref(), &cfg, &a.out).map_err(|e| match e {
        nsb_core::stimuli::StimuliError::Io(_) | nsb_core::stimuli::StimuliError::Image(_) => io(e),
        _ => input(e),
    })?;
    print_json(out, &serde_json::json!({ "stimuli": pool.len(), "pool": a.out }))
}

fn serve(a: ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let pool = StimulusPool::load(&a.stimuli).map_err(input)?;
    let store = RatingStore::open(&a.store).map_err(input)?;
    let plan = PlanConfig { decoys_per_class: a.decoys_per_class, ..PlanConfig::default() };
    let engine = nsb_core::dsis::DsisEngine::new(pool, store, Box::new(SystemClock), plan);
    let shared = nsb_core::dsis::SharedEngine::new(engine);
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Server(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .map_err(|e| CliError::Server(format!("bind {}:{}: {e}", a.host, a.port)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Server(e.to_string()))?;
        print_json(out, &serde_json::json!({ "listening": addr.to_string() }))?;
        out.flush().map_err(io)?;
        axum::serve(listener, server::router(shared)).await.map_err(|e| CliError::Server(e.to_string()))
    })
}
