//! Flat `key=value` run configuration.
//!
//! Resolution order, later wins: built-in defaults, preset, config file,
//! command-line flags. The resolved config lists every key and is enough to
//! replay a run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{ShapeFamily, SynthParams};
use crate::train::{AugmentPolicy, FreezeSelector, LossKind, OptimizerKind, Precision, TrainConfig};
use crate::zoo::{BuildOptions, ChannelSequence, HeadKind, ModelKind};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config";
/// Default output root when `out` is not given.
pub const OUT_ENV: &str = "MRISEG_OUT";

/// Errors in config text or values; the CLI maps these to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: cannot parse `{value}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("line {line}: expected key=value, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub model: ModelKind,
    /// `None` picks the model's natural head.
    pub head: Option<HeadKind>,
    pub image_size: (usize, usize),
    pub channels: ChannelSequence,
    pub se_ratio: Option<usize>,
    /// Dataset directory; `None` generates a synthetic set.
    pub data: Option<PathBuf>,
    pub synthetic_count: usize,
    pub shape: ShapeFamily,
    pub tumor_probability: f64,
    pub contrast: f64,
    pub noise: f64,
    pub split: [f64; 3],
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub batch_growth_epoch: usize,
    pub batch_growth_factor: f64,
    pub loss: LossKind,
    pub dice_smooth: f64,
    pub augment: bool,
    pub precision: Precision,
    pub record_time: bool,
    pub freeze: Option<FreezeSelector>,
    /// Weights archive loaded by name before training.
    pub init: Option<PathBuf>,
    pub threshold: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SynthParams::default();
        Self {
            preset: String::new(),
            model: ModelKind::ResUNet,
            head: None,
            image_size: s.image_size,
            channels: ChannelSequence::default(),
            se_ratio: Some(4),
            data: None,
            synthetic_count: 64,
            shape: s.shape,
            tumor_probability: s.tumor_probability,
            contrast: s.contrast,
            noise: s.noise,
            split: [0.7, 0.15, 0.15],
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            batch_size: t.base_batch_size,
            batch_growth_epoch: t.batch_growth_epoch,
            batch_growth_factor: t.batch_growth_factor,
            loss: t.loss,
            dice_smooth: t.dice_smooth,
            augment: true,
            precision: t.precision,
            record_time: t.record_time,
            freeze: None,
            init: None,
            threshold: crate::pipeline::DEFAULT_GATE,
            seed: t.seed,
            out: default_out(),
        }
    }
}

fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Every key, in resolved-config order.
pub const KEYS: &[&str] = &[
    "preset",
    "model",
    "head",
    "image_size",
    "channels",
    "se_ratio",
    "data",
    "synthetic_count",
    "shape",
    "tumor_probability",
    "contrast",
    "noise",
    "split",
    "epochs",
    "learning_rate",
    "optimizer",
    "batch_size",
    "batch_growth_epoch",
    "batch_growth_factor",
    "loss",
    "dice_smooth",
    "augment",
    "precision",
    "record_time",
    "freeze",
    "init",
    "threshold",
    "seed",
    "out",
];

/// `(name, model, epochs, learning rate, image side)`.
const PRESETS: &[(&str, ModelKind, usize, f64, usize)] = &[
    ("paper-resnet50", ModelKind::ResNet50, 15, 1e-4, 256),
    ("paper-vgg16", ModelKind::Vgg16, 20, 1e-4, 256),
    ("paper-resunet", ModelKind::ResUNet, 30, 1e-5, 256),
    ("desk-cnn-baseline", ModelKind::CnnBaseline, 10, 1e-3, 64),
    ("desk-resnet50", ModelKind::ResNet50, 5, 1e-3, 64),
    ("desk-vgg16", ModelKind::Vgg16, 5, 1e-3, 64),
    ("desk-resunet", ModelKind::ResUNet, 20, 1e-3, 64),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.0)
}

fn bad(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: reason.to_string(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: ToString,
{
    value.parse().map_err(|e: T::Err| bad(key, value, e))
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn parse_size(key: &str, value: &str) -> Result<(usize, usize), ConfigError> {
    let (h, w) = value.split_once('x').unwrap_or((value, value));
    Ok((parse(key, h.trim())?, parse(key, w.trim())?))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "preset" => self.apply_preset(v)?,
            "model" => self.model = parse(key, v)?,
            "head" => {
                self.head = match v {
                    "auto" | "" => None,
                    "classifier" => Some(HeadKind::Classifier),
                    "segmenter" => Some(HeadKind::Segmenter),
                    _ => return Err(bad(key, v, "expected auto, classifier or segmenter")),
                }
            }
            "image_size" => self.image_size = parse_size(key, v)?,
            "channels" => {
                let widths = v.split(',').map(|w| parse(key, w.trim())).collect::<Result<Vec<usize>, _>>()?;
                self.channels = ChannelSequence::new(widths).map_err(|e| bad(key, v, e))?;
            }
            "se_ratio" => self.se_ratio = if v == "none" || v == "0" { None } else { Some(parse(key, v)?) },
            "data" => self.data = optional_path(v),
            "synthetic_count" => self.synthetic_count = parse(key, v)?,
            "shape" => self.shape = parse(key, v)?,
            "tumor_probability" => self.tumor_probability = parse(key, v)?,
            "contrast" => self.contrast = parse(key, v)?,
            "noise" => self.noise = parse(key, v)?,
            "split" => {
                let parts = v.split(',').map(|p| parse(key, p.trim())).collect::<Result<Vec<f64>, _>>()?;
                self.split = parts.try_into().map_err(|_| bad(key, v, "expected three fractions"))?;
            }
            "epochs" => self.epochs = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "optimizer" => self.optimizer = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "batch_growth_epoch" => self.batch_growth_epoch = parse(key, v)?,
            "batch_growth_factor" => self.batch_growth_factor = parse(key, v)?,
            "loss" => self.loss = parse(key, v)?,
            "dice_smooth" => self.dice_smooth = parse(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "precision" => self.precision = parse(key, v)?,
            "record_time" => self.record_time = parse_bool(key, v)?,
            "freeze" => self.freeze = if v.is_empty() || v == "none" { None } else { Some(parse(key, v)?) },
            "init" => self.init = optional_path(v),
            "threshold" => self.threshold = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies a named preset. `paper` and `desk` pick the entry for the
    /// current model.
    pub fn apply_preset(&mut self, name: &str) -> Result<(), ConfigError> {
        if name.is_empty() {
            self.preset.clear();
            return Ok(());
        }
        let full = match name {
            "paper" | "desk" => format!("{name}-{}", self.model),
            other => other.to_string(),
        };
        let &(_, model, epochs, lr, side) = PRESETS
            .iter()
            .find(|p| p.0 == full)
            .ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
        self.preset = full;
        self.model = model;
        self.epochs = epochs;
        self.learning_rate = lr;
        self.image_size = (side, side);
        Ok(())
    }

    /// Text value of one key, as written to the resolved config.
    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        Some(match key {
            "preset" => self.preset.clone(),
            "model" => self.model.to_string(),
            "head" => match self.head {
                None => "auto".into(),
                Some(HeadKind::Classifier) => "classifier".into(),
                Some(HeadKind::Segmenter) => "segmenter".into(),
            },
            "image_size" => format!("{}x{}", self.image_size.0, self.image_size.1),
            "channels" => self.channels.widths().iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "se_ratio" => self.se_ratio.map(|r| r.to_string()).unwrap_or_else(|| "none".into()),
            "data" => path(&self.data),
            "synthetic_count" => self.synthetic_count.to_string(),
            "shape" => self.shape.to_string(),
            "tumor_probability" => self.tumor_probability.to_string(),
            "contrast" => self.contrast.to_string(),
            "noise" => self.noise.to_string(),
            "split" => join(&self.split),
            "epochs" => self.epochs.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "optimizer" => self.optimizer.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "batch_growth_epoch" => self.batch_growth_epoch.to_string(),
            "batch_growth_factor" => self.batch_growth_factor.to_string(),
            "loss" => self.loss.to_string(),
            "dice_smooth" => self.dice_smooth.to_string(),
            "augment" => self.augment.to_string(),
            "precision" => self.precision.to_string(),
            "record_time" => self.record_time.to_string(),
            "freeze" => self.freeze.as_ref().map(|f| f.to_string()).unwrap_or_else(|| "none".into()),
            "init" => path(&self.init),
            "threshold" => self.threshold.to_string(),
            "seed" => self.seed.to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    /// Every key as `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key}={}", self.get(key).expect("listed key")).expect("string write");
        }
        out
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            base_batch_size: self.batch_size,
            batch_growth_epoch: self.batch_growth_epoch,
            batch_growth_factor: self.batch_growth_factor,
            loss: self.loss,
            dice_smooth: self.dice_smooth,
            augment: if self.augment { AugmentPolicy::default() } else { AugmentPolicy::none() },
            seed: self.seed,
            precision: self.precision,
            record_time: self.record_time,
        }
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            image_size: self.image_size,
            tumor_probability: self.tumor_probability,
            shape: self.shape,
            contrast: self.contrast,
            noise: self.noise,
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            input_size: self.image_size,
            in_channels: None,
            seed: self.seed,
            head: self.head.unwrap_or(match self.model {
                ModelKind::ResUNet => HeadKind::Segmenter,
                _ => HeadKind::Classifier,
            }),
            channels: self.channels.clone(),
            se_ratio: self.se_ratio,
        }
    }
}

/// Parses config text into ordered `(key, value)` pairs. Blank lines and
/// `#` comments are skipped; keys are not validated here.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.into(),
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Resolves defaults, preset, file pairs and flag pairs in that order. The
/// preset may come from either source; a flag preset wins.
pub fn resolve(file: &[(String, String)], flags: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let lookup = |key: &str| {
        flags
            .iter()
            .rev()
            .chain(file.iter().rev())
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
    };
    if let Some(model) = lookup("model") {
        cfg.set("model", &model)?;
    }
    if let Some(preset) = lookup("preset") {
        cfg.apply_preset(&preset)?;
    }
    for (k, v) in file.iter().chain(flags) {
        if k != "preset" {
            cfg.set(k, v)?;
        }
    }
    Ok(cfg)
}

/// Reads and resolves a config file with no flag overrides.
pub fn load_config(path: &Path) -> crate::Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    let pairs = parse_pairs(&text).map_err(config_to_error)?;
    resolve(&pairs, &[]).map_err(config_to_error)
}

pub(crate) fn config_to_error(e: ConfigError) -> crate::Error {
    let key = match &e {
        ConfigError::UnknownKey(k) | ConfigError::BadValue { key: k, .. } => k.clone(),
        ConfigError::Syntax { .. } => "syntax".into(),
        ConfigError::UnknownPreset(_) => "preset".into(),
    };
    crate::Error::Config {
        key,
        message: e.to_string(),
    }
}
