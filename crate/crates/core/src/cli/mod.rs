//! The `mriseg` command-line driver.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    load_dataset, load_weights, normalize_resize, resize_mask, save_weights, split, synth_dataset, write_dataset,
    DataSource, Dataset, LoadMode, Sample,
};
use crate::error::Error;
use crate::pipeline::{predict_dataset, write_predictions, Classifier, Segmenter};
use crate::report::{evaluate, write_history_csv, write_overlay, EvalOptions, EvalReport, HISTORY_FILE, REPORT_FILE};
use crate::train::{freeze, train};
use crate::zoo::{build, HeadKind, ModelGraph};

pub use config::{load_config, parse_pairs, resolve, ConfigError, RunConfig, KEYS, OUT_ENV, RESOLVED_CONFIG_FILE};

pub const WEIGHTS_FILE: &str = "weights.gsw";

#[derive(Debug, Parser)]
#[command(name = "mriseg", version, about = "Train, evaluate and run the classify-then-segment pipeline")]
pub struct Cli {
    /// Threads used to load and resize images; never changes results.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (images, masks, manifest.csv) to `out`.
    Generate(ConfigArgs),
    /// Train one model; writes weights, history.csv and resolved_config.
    Train(ConfigArgs),
    /// Score a trained run on the train and validation splits.
    Evaluate {
        /// Run directory produced by `train`.
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Route every image through a classifier gate and a segmenter.
    Predict {
        /// Run directory of the classifier.
        #[arg(long)]
        classifier: PathBuf,
        /// Run directory of the segmenter.
        #[arg(long)]
        segmenter: PathBuf,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Compare several trained runs on one dataset.
    Report {
        /// Run directories, in table order.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[command(flatten)]
        args: ConfigArgs,
    },
}

/// Config sources shared by every subcommand. Dedicated flags are shorthand
/// for `--set key=value`.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// paper-resnet50, paper-vgg16, paper-resunet, desk-*, or paper/desk for the chosen model.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long = "learning-rate")]
    pub learning_rate: Option<String>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<String>,
    #[arg(long = "image-size")]
    pub image_size: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub threshold: Option<String>,
    #[arg(long)]
    pub freeze: Option<String>,
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub count: Option<String>,
    #[arg(long)]
    pub shape: Option<String>,
}

impl ConfigArgs {
    fn flag_pairs(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut pairs = Vec::new();
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let named = [
            ("preset", &self.preset),
            ("model", &self.model),
            ("data", &self.data),
            ("out", &self.out),
            ("epochs", &self.epochs),
            ("learning_rate", &self.learning_rate),
            ("batch_size", &self.batch_size),
            ("image_size", &self.image_size),
            ("seed", &self.seed),
            ("threshold", &self.threshold),
            ("freeze", &self.freeze),
            ("init", &self.init),
            ("synthetic_count", &self.count),
            ("shape", &self.shape),
        ];
        pairs.extend(named.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))));
        Ok(pairs)
    }

    /// Resolves the config, optionally on top of a base config file (a run's
    /// resolved_config).
    pub fn resolve(&self, base: Option<&Path>) -> Result<RunConfig, CliError> {
        let mut file = Vec::new();
        for path in base.into_iter().chain(self.config.as_deref()) {
            let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(Error::io(path, e)))?;
            file.extend(parse_pairs(&text)?);
        }
        Ok(resolve(&file, &self.flag_pairs()?)?)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Freeze(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) | CliError::Config(_) => 2,
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mriseg: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let workers = cli.workers.max(1);
    match &cli.command {
        Command::Generate(args) => generate(&args.resolve(None)?),
        Command::Train(args) => train_run(&args.resolve(None)?, workers),
        Command::Evaluate { run, args } => {
            let cfg = args.resolve(Some(&run.join(RESOLVED_CONFIG_FILE)))?;
            let cfg = out_or(cfg, args, run);
            evaluate_runs(&cfg, std::slice::from_ref(run), workers)
        }
        Command::Report { runs, args } => {
            let cfg = args.resolve(Some(&runs[0].join(RESOLVED_CONFIG_FILE)))?;
            let cfg = out_or(cfg, args, &runs[0]);
            evaluate_runs(&cfg, runs, workers)
        }
        Command::Predict {
            classifier,
            segmenter,
            args,
        } => predict(&args.resolve(Some(&segmenter.join(RESOLVED_CONFIG_FILE)))?, classifier, segmenter, args, workers),
    }
}

/// Commands reading a run default to writing next to it.
fn out_or(mut cfg: RunConfig, args: &ConfigArgs, run: &Path) -> RunConfig {
    let explicit = args.out.is_some() || args.set.iter().any(|s| s.trim_start().starts_with("out="));
    if !explicit {
        cfg.out = run.to_path_buf();
    }
    cfg
}

fn create_out(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::Runtime(Error::io(&cfg.out, e)))
}

fn write_resolved(cfg: &RunConfig, name: &str) -> Result<(), CliError> {
    let path = cfg.out.join(name);
    fs::write(&path, cfg.to_text()).map_err(|e| CliError::Runtime(Error::io(&path, e)))
}

fn check_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Runtime(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        )))
    }
}

/// Loads the configured dataset (or synthesizes one) at the configured size.
pub fn load_data(cfg: &RunConfig, workers: usize) -> Result<Dataset, CliError> {
    let ds = match &cfg.data {
        Some(dir) => {
            check_exists(dir)?;
            load_dataset(dir)?
        }
        None => synth_dataset(cfg.seed, cfg.synthetic_count, &cfg.synth_params())?,
    };
    Ok(resize_dataset(ds, cfg.image_size, workers)?)
}

fn resize_sample(s: Sample, size: (usize, usize)) -> crate::Result<Sample> {
    if (s.image.shape()[1], s.image.shape()[2]) == size {
        return Ok(s);
    }
    Ok(Sample {
        image: normalize_resize(&s.image, size)?,
        mask: resize_mask(&s.mask, size)?,
        ..s
    })
}

/// Resizes samples on up to `workers` threads; order is preserved.
fn resize_dataset(ds: Dataset, size: (usize, usize), workers: usize) -> crate::Result<Dataset> {
    let Dataset { samples, source } = ds;
    let chunk = samples.len().div_ceil(workers.max(1)).max(1);
    let mut parts: Vec<Vec<Sample>> = Vec::new();
    let mut rest = samples;
    while !rest.is_empty() {
        let tail = rest.split_off(chunk.min(rest.len()));
        parts.push(rest);
        rest = tail;
    }
    let resized: Vec<crate::Result<Vec<Sample>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = parts
            .into_iter()
            .map(|part| scope.spawn(move || part.into_iter().map(|s| resize_sample(s, size)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("resize worker panicked")).collect()
    });
    let mut samples = Vec::new();
    for part in resized {
        samples.extend(part?);
    }
    Dataset::new(samples, source)
}

fn build_model(cfg: &RunConfig) -> Result<ModelGraph, CliError> {
    Ok(build(cfg.model, &cfg.build_options())?)
}

/// Rebuilds a trained model from its run directory.
pub fn load_run(run: &Path) -> Result<(RunConfig, ModelGraph), CliError> {
    let cfg_path = run.join(RESOLVED_CONFIG_FILE);
    check_exists(&cfg_path)?;
    let cfg = load_config(&cfg_path)?;
    let mut model = build_model(&cfg)?;
    let weights = run.join(WEIGHTS_FILE);
    check_exists(&weights)?;
    load_weights(model.store_mut(), &weights, LoadMode::Strict)?;
    Ok((cfg, model))
}

fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = synth_dataset(cfg.seed, cfg.synthetic_count, &cfg.synth_params())?;
    create_out(cfg)?;
    write_dataset(&ds, &cfg.out)?;
    write_resolved(cfg, RESOLVED_CONFIG_FILE)?;
    println!("wrote {} samples ({} with lesions) to {}", ds.len(), ds.positives(), cfg.out.display());
    Ok(())
}

fn train_run(cfg: &RunConfig, workers: usize) -> Result<(), CliError> {
    if let Some(init) = &cfg.init {
        check_exists(init)?;
    }
    let ds = load_data(cfg, workers)?;
    let (train_set, val_set, _) = split(&ds, cfg.split, cfg.seed)?;
    let mut model = build_model(cfg)?;
    if let Some(init) = &cfg.init {
        let r = load_weights(model.store_mut(), init, LoadMode::ByName)?;
        println!("initialized {} tensors from {}", r.loaded.len(), init.display());
    }
    if let Some(sel) = &cfg.freeze {
        let r = freeze(&mut model, sel)?;
        println!("froze {} tensors; trainable {} of {}", r.frozen.len(), r.after.trainable, r.after.total);
    }
    let history = train(&mut model, &train_set, &val_set, &cfg.train_config())?;
    create_out(cfg)?;
    save_weights(model.store(), &cfg.out.join(WEIGHTS_FILE))?;
    write_history_csv(&history, &cfg.out.join(HISTORY_FILE))?;
    write_resolved(cfg, RESOLVED_CONFIG_FILE)?;
    if let Some(last) = history.last() {
        println!(
            "{}: epoch {} train_acc {:.4} val_acc {:.4} val_loss {:.4}",
            history.model, last.epoch, last.train_acc, last.val_acc, last.val_loss
        );
    }
    Ok(())
}

fn evaluate_runs(cfg: &RunConfig, runs: &[PathBuf], workers: usize) -> Result<(), CliError> {
    let ds = load_data(cfg, workers)?;
    let (train_set, val_set, _) = split(&ds, cfg.split, cfg.seed)?;
    let mut models = Vec::new();
    for run in runs {
        let (_, model) = load_run(run)?;
        let name = run
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| model.name().to_string());
        models.push((name, model));
    }
    let refs: Vec<(&str, &ModelGraph)> = models.iter().map(|(n, m)| (n.as_str(), m)).collect();
    let opts = EvalOptions {
        loss: cfg.loss,
        dice_smooth: cfg.dice_smooth,
        batch_size: cfg.batch_size,
    };
    let report: EvalReport = evaluate(&refs, &train_set, &val_set, &opts)?;
    create_out(cfg)?;
    report.write_csv(&cfg.out.join(REPORT_FILE))?;
    write_resolved(cfg, "resolved_config.evaluate")?;
    print!("{}", report.to_csv());
    Ok(())
}

fn predict(cfg: &RunConfig, classifier: &Path, segmenter: &Path, args: &ConfigArgs, workers: usize) -> Result<(), CliError> {
    let (_, cls) = load_run(classifier)?;
    let (_, seg) = load_run(segmenter)?;
    if cls.head != HeadKind::Classifier || seg.head != HeadKind::Segmenter {
        return Err(CliError::Usage("--classifier needs a classifier run and --segmenter a segmenter run".into()));
    }
    let cfg = out_or(cfg.clone(), args, segmenter);
    let ds = load_data(&cfg, workers)?;
    let preds = predict_dataset(&cls as &dyn Classifier, &seg as &dyn Segmenter, &ds, cfg.threshold)?;
    create_out(&cfg)?;
    write_predictions(&preds, &cfg.out)?;
    let overlays = cfg.out.join("overlays");
    fs::create_dir_all(&overlays).map_err(|e| CliError::Runtime(Error::io(&overlays, e)))?;
    for (p, s) in preds.iter().zip(&ds.samples) {
        let empty = crate::Tensor::zeros(s.mask.shape().to_vec());
        write_overlay(&overlays, &p.case_id, &s.image, &s.mask, p.mask.as_ref().unwrap_or(&empty))?;
    }
    write_resolved(&cfg, "resolved_config.predict")?;
    let routed = preds.iter().filter(|p| p.routed).count();
    println!("{} images, {} routed to the segmenter, threshold {}", preds.len(), routed, cfg.threshold);
    if let DataSource::Synthetic { .. } = ds.source {
        println!("(synthetic data)");
    }
    Ok(())
}
