//! Batch entry points for the `avra` binary.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use avra_core::analyzer::{self, Classifier};
use avra_core::audio::{decode_wav, WORKING_SAMPLE_RATE};
use avra_core::cnn::{self, CnnConfig, EpochReport};
use avra_core::dataset::{
    augment, flatten, generate_synthetic_corpus, split_train_test, standardize, write_corpus, DatasetManifest,
    RegisterLabel, SyntheticCorpusConfig, FEATURE_DIM,
};
use avra_core::dsp::{MelConfig, MelRenderer, StftConfig};
use avra_core::eval::{confusion, metrics};
use avra_core::image::SpectrogramImage;
use avra_core::model_io::{Model, ModelKind};
use avra_core::svm::{self, SvmTrainConfig};
use avra_core::{AnyModel, Report};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] avra_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "avra", version, about = "Vocal register classification from mel-spectrograms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a labelled synthetic corpus and its manifest.
    GenCorpus(GenCorpusArgs),
    /// Train on the manifest's training split and report on its test split.
    Train(TrainArgs),
    /// Evaluate a saved model against a manifest.
    Eval(EvalArgs),
    /// Label a WAV selection at 10-column ticks and draw the result.
    Analyze(AnalyzeArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct MelArgs {
    #[arg(long, default_value_t = 20_000.0)]
    pub fmax: f64,
    #[arg(long = "gain-db", default_value_t = 20.0, allow_negative_numbers = true)]
    pub gain_db: f64,
    #[arg(long = "range-db", default_value_t = 80.0)]
    pub range_db: f64,
}

impl MelArgs {
    pub fn config(&self) -> Result<MelConfig> {
        let cfg = MelConfig {
            f_max: self.fmax,
            gain_db: self.gain_db,
            range_db: self.range_db,
            ..MelConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long = "per-class", default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, env = "AVRA_SEED", default_value_t = 7)]
    pub seed: u64,
    /// Seed recorded in the manifest for the train/test split; defaults to `--seed`.
    #[arg(long = "split-seed")]
    pub split_seed: Option<u64>,
    #[arg(long = "clip-seconds", default_value_t = 3.0)]
    pub clip_seconds: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub mel: MelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Svm,
    Cnn,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the split seed stored in the manifest.
    #[arg(long = "split-seed")]
    pub split_seed: Option<u64>,
    #[arg(long, env = "AVRA_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Model output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 2.5e-6)]
    pub c: f64,
    #[arg(long = "bias-scale", default_value_t = 100.0)]
    pub bias_scale: f64,
    #[arg(long = "max-epochs", default_value_t = 1000)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 6)]
    pub epochs: usize,
    #[arg(long = "learning-rate", default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long = "batch-size", default_value_t = 32)]
    pub batch_size: usize,
    /// Augment the CNN's training images too (the SVM always trains on augmented data).
    #[arg(long = "cnn-augment")]
    pub cnn_augment: bool,
}

impl TrainArgs {
    pub fn svm_config(&self) -> Result<SvmTrainConfig> {
        let cfg = SvmTrainConfig {
            c: self.c,
            bias_scale: self.bias_scale,
            max_epochs: self.max_epochs,
            seed: self.seed,
            ..SvmTrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cnn_config(&self) -> Result<CnnConfig> {
        let cfg = CnnConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            seed: self.seed,
            ..CnnConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    #[arg(long = "split-seed")]
    pub split_seed: Option<u64>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Selection start in seconds.
    #[arg(long, default_value_t = 0.0)]
    pub start: f64,
    /// Selection end in seconds; defaults to the end of the clip.
    #[arg(long)]
    pub end: Option<f64>,
    /// Annotated PNG output.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the `x,label,confidence` lines here.
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[command(flatten)]
    pub mel: MelArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    #[arg(long)]
    pub svm: Option<PathBuf>,
    #[arg(long)]
    pub cnn: Option<PathBuf>,
    #[arg(long = "max-body-bytes", default_value_t = avra_service::DEFAULT_MAX_BODY_BYTES)]
    pub max_body_bytes: usize,
    #[arg(long = "store-capacity", default_value_t = avra_service::DEFAULT_STORE_CAPACITY)]
    pub store_capacity: usize,
    #[command(flatten)]
    pub mel: MelArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus(a) => cmd_gen_corpus(&a).map(|m| {
            println!("wrote {} images and {}", m.len(), a.out.join("manifest.txt").display());
        }),
        Command::Train(a) => {
            let out = cmd_train(&a)?;
            print!("{}", out.text);
            Ok(())
        }
        Command::Eval(a) => {
            print!("{}", cmd_eval(&a)?.to_text());
            Ok(())
        }
        Command::Analyze(a) => {
            print!("{}", cmd_analyze(&a)?.to_text());
            Ok(())
        }
        Command::Serve(a) => cmd_serve(&a),
    }
}

pub fn cmd_gen_corpus(a: &GenCorpusArgs) -> Result<DatasetManifest> {
    let cfg = SyntheticCorpusConfig {
        per_class: a.per_class,
        seed: a.seed,
        clip_seconds: a.clip_seconds,
        mel: a.mel.config()?,
        ..SyntheticCorpusConfig::default()
    };
    cfg.validate()?;
    let clips = generate_synthetic_corpus::<f64>(&cfg)?;
    Ok(write_corpus(&clips, &a.out, a.split_seed.unwrap_or(a.seed))?)
}

/// Standardized images and labels of one manifest, with its directory-relative paths resolved.
pub struct LoadedManifest {
    pub manifest: DatasetManifest,
    pub images: Vec<SpectrogramImage<f64>>,
    pub labels: Vec<RegisterLabel>,
}

pub fn load_manifest(path: &Path) -> Result<LoadedManifest> {
    let manifest = DatasetManifest::read(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let images = manifest
        .load_images::<f64>(root)?
        .iter()
        .map(standardize)
        .collect::<avra_core::Result<Vec<_>>>()?;
    let labels = manifest.labels();
    Ok(LoadedManifest {
        manifest,
        images,
        labels,
    })
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

pub struct TrainOutput {
    pub model: AnyModel,
    pub report: Report,
    pub epochs: Vec<EpochReport>,
    pub train_images: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub text: String,
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainOutput> {
    let svm_cfg = a.svm_config()?;
    let cnn_cfg = a.cnn_config()?;
    let data = load_manifest(&a.manifest)?;
    let split = split_train_test(&data.labels, TRAIN_FRACTION, a.split_seed.unwrap_or(data.manifest.split_seed))?;
    let train_imgs = pick(&data.images, &split.train);
    let train_labels = pick(&data.labels, &split.train);
    let test_imgs = pick(&data.images, &split.test);
    let test_labels = pick(&data.labels, &split.test);

    let augmented = |imgs: &[SpectrogramImage<f64>], labels: &[RegisterLabel]| {
        let mut xs = Vec::with_capacity(imgs.len() * 6);
        let mut ys = Vec::with_capacity(imgs.len() * 6);
        for (img, &y) in imgs.iter().zip(labels) {
            for v in augment(img) {
                xs.push(v);
                ys.push(y);
            }
        }
        (xs, ys)
    };

    let (model, epochs, train_samples) = match a.kind {
        KindArg::Svm => {
            let (xs, ys) = augmented(&train_imgs, &train_labels);
            let features = xs.iter().map(flatten).collect::<avra_core::Result<Vec<_>>>()?;
            let model = svm::train(&features, &ys, &svm_cfg)?;
            (Model::Svm(model), Vec::new(), ys.len())
        }
        KindArg::Cnn => {
            let (xs, ys) = if a.cnn_augment {
                augmented(&train_imgs, &train_labels)
            } else {
                (train_imgs.clone(), train_labels.clone())
            };
            let (model, epochs) = cnn::train_with_progress(&cnn_cfg, &xs, &ys, &test_imgs, &test_labels, |r| {
                eprintln!(
                    "epoch {}: train loss {:.6}, val loss {:.6}, val accuracy {:.4}",
                    r.epoch, r.train_loss_mean, r.val_loss, r.val_accuracy
                );
            })?;
            (Model::Cnn(model), epochs, ys.len())
        }
    };
    model.save(&a.out)?;
    let report = evaluate(&model, &test_imgs, &test_labels)?;

    let mut text = String::new();
    let _ = writeln!(text, "model: {}", model.kind().name());
    let _ = writeln!(text, "train_images: {}", train_imgs.len());
    let _ = writeln!(text, "train_samples: {train_samples}");
    let _ = writeln!(text, "test_samples: {}", test_imgs.len());
    if !epochs.is_empty() {
        let _ = writeln!(text);
        text.push_str(&epoch_table(&epochs));
    }
    let _ = writeln!(text);
    text.push_str(&report.to_text());
    if let Some(path) = &a.report {
        std::fs::write(path, &text).map_err(io_err(path))?;
    }
    Ok(TrainOutput {
        model,
        report,
        epochs,
        train_images: train_imgs.len(),
        train_samples,
        test_samples: test_imgs.len(),
        text,
    })
}

pub fn epoch_table(epochs: &[EpochReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6}{:>12}{:>12}{:>12}{:>12}{:>14}",
        "Epoch", "Train Loss", "Loss Min", "Loss Max", "Val Loss", "Val Accuracy"
    );
    for r in epochs {
        let _ = writeln!(
            out,
            "{:<6}{:>12.6}{:>12.6}{:>12.6}{:>12.6}{:>14.4}",
            r.epoch, r.train_loss_mean, r.train_loss_min, r.train_loss_max, r.val_loss, r.val_accuracy
        );
    }
    out
}

/// Metrics of `model` on already standardized images.
pub fn evaluate(
    model: &dyn Classifier<f64>,
    images: &[SpectrogramImage<f64>],
    labels: &[RegisterLabel],
) -> Result<Report> {
    let predicted = images
        .iter()
        .map(|img| model.classify(img).map(|(l, _)| l))
        .collect::<avra_core::Result<Vec<_>>>()?;
    Ok(metrics(&confusion(labels, &predicted)?)?)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Report> {
    let model = Model::<f64>::load_expecting(&a.model, FEATURE_DIM)?;
    let data = load_manifest(&a.manifest)?;
    let idx: Vec<usize> = match a.split {
        SplitArg::All => (0..data.labels.len()).collect(),
        split => {
            let s = split_train_test(&data.labels, TRAIN_FRACTION, a.split_seed.unwrap_or(data.manifest.split_seed))?;
            if split == SplitArg::Train {
                s.train
            } else {
                s.test
            }
        }
    };
    let report = evaluate(&model, &pick(&data.images, &idx), &pick(&data.labels, &idx))?;
    if let Some(path) = &a.out {
        std::fs::write(path, report.to_text()).map_err(io_err(path))?;
    }
    Ok(report)
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<avra_core::Analysis> {
    let renderer = MelRenderer::new(StftConfig::default(), a.mel.config()?, WORKING_SAMPLE_RATE)?;
    let model = Model::<f64>::load_expecting(&a.model, FEATURE_DIM)?;
    let bytes = std::fs::read(&a.input).map_err(io_err(&a.input))?;
    let audio = decode_wav::<f64>(&bytes)?;
    let end = a.end.unwrap_or_else(|| audio.duration_seconds());
    let result = analyzer::analyze(&audio, a.start, end, &renderer, &model)?;
    let png = result.annotate().to_png()?;
    std::fs::write(&a.out, png).map_err(io_err(&a.out))?;
    if let Some(path) = &a.text {
        std::fs::write(path, result.to_text()).map_err(io_err(path))?;
    }
    Ok(result)
}

fn load_kind(path: &Path, kind: ModelKind) -> Result<AnyModel> {
    let model = Model::<f64>::load_expecting(path, FEATURE_DIM)?;
    if model.kind() != kind {
        return Err(CliError::Usage(format!(
            "{} holds a {} model, expected {}",
            path.display(),
            model.kind().name(),
            kind.name()
        )));
    }
    Ok(model)
}

pub fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let svm = match &a.svm {
        Some(p) => match load_kind(p, ModelKind::Svm)? {
            Model::Svm(m) => Some(m),
            Model::Cnn(_) => unreachable!(),
        },
        None => None,
    };
    let cnn = match &a.cnn {
        Some(p) => match load_kind(p, ModelKind::Cnn)? {
            Model::Cnn(m) => Some(m),
            Model::Svm(_) => unreachable!(),
        },
        None => None,
    };
    let config = avra_service::ServiceConfig {
        max_body_bytes: a.max_body_bytes,
        store_capacity: a.store_capacity,
        mel: a.mel.config()?,
    };
    let state = Arc::new(avra_service::AppState::new(config, svm, cnn)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io {
        path: PathBuf::from("<runtime>"),
        source: e,
    })?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.listen)
            .await
            .map_err(|e| CliError::Usage(format!("cannot listen on {}: {e}", a.listen)))?;
        eprintln!("listening on {}", listener.local_addr().map_err(io_err(Path::new("<listener>")))?);
        avra_service::serve(listener, state)
            .await
            .map_err(io_err(Path::new("<listener>")))
    })
}
