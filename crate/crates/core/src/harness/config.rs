//! Experiment configuration.
//!
//! Configs are TOML documents. Every key is optional unless marked required;
//! unknown keys are rejected.
//!
//! ```toml
//! [model]
//! kind = "logistic"        # required: "quadratic" | "logistic" | "mlp"
//! hidden = 16              # mlp only, default 16
//! classes = 3              # mlp only, default 2
//!
//! [data]                   # synthetic (samples + features) or file (path)
//! samples = 2000
//! features = 19
//! noise = 0.1              # label-flip probability / regression noise sd
//! eval_samples = 500       # held-out split, default 0 (none)
//! # path = "train.csv"     # delimited text: features..., label
//! # eval_path = "test.csv"
//!
//! [federation]
//! clients = 8              # required
//! partition = "iid"        # "iid" | "sorted_label"
//!
//! [training]
//! rounds = 300             # required
//! local_steps = 10
//! batch_size = 32
//! lr = 0.1
//! lr_decay = 0.9           # optional step decay factor ...
//! lr_decay_every = 100     # ... applied every this many rounds
//! seed = 0
//! bit_budget = 1000000     # optional, per client
//! loss_threshold = 0.3     # optional, for bits-to-threshold
//! stop_at_threshold = false
//! loss_estimate_batch = 64 # optional; default is the exact full-shard loss
//! eval_every = 1
//!
//! [quantization.adaquant]  # default mode; or [quantization.fixed], not both
//! s0 = 2
//! interval_bits = 320      # default 16·d
//! s_max = 65535
//!
//! # [quantization.fixed]
//! # bits = 4               # s = 2^bits − 1
//!
//! [diagnostics]
//! smoothness = 0.25        # enables the per-round step-size check
//!
//! [output]
//! dir = "results"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::controller::{LrSchedule, QuantMode};
use crate::error::{Error, Result};
use crate::fedsim::LossEstimate;
use crate::objectives::{ModelKind, ModelSpec, PartitionMode};

const DEFAULT_HIDDEN: usize = 16;
const DEFAULT_LOCAL_STEPS: u32 = 10;
const DEFAULT_BATCH: usize = 32;
const DEFAULT_LR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        samples: usize,
        features: usize,
        noise: f64,
        eval_samples: usize,
    },
    File {
        path: PathBuf,
        eval_path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantConfig {
    Fixed { bits: u32 },
    /// `interval_bits` of `None` means `16·d`.
    Adaptive { s0: u32, interval_bits: Option<u64>, s_max: u32 },
}

impl QuantConfig {
    pub fn mode(&self, d: usize) -> Result<QuantMode> {
        match *self {
            QuantConfig::Fixed { bits } => QuantMode::fixed_bits(bits),
            QuantConfig::Adaptive { s0, interval_bits, s_max } => Ok(QuantMode::Adaptive {
                s0,
                interval_bits: interval_bits.unwrap_or(16 * d as u64),
                s_max,
            }),
        }
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub model: ModelKind,
    pub data: DataSource,
    pub clients: usize,
    pub partition: PartitionMode,
    pub local_steps: u32,
    pub batch_size: usize,
    pub lr: LrSchedule<f64>,
    pub quant: QuantConfig,
    pub rounds: u64,
    pub bit_budget: Option<u64>,
    pub loss_threshold: Option<f64>,
    pub stop_at_threshold: bool,
    pub seed: u64,
    pub loss_estimate: LossEstimate,
    pub eval_every: u64,
    pub smoothness: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

impl TrainingConfig {
    /// Input width when it is known without reading files.
    pub fn input_dim(&self) -> Option<usize> {
        match self.data {
            DataSource::Synthetic { features, .. } => Some(features),
            DataSource::File { .. } => None,
        }
    }

    /// Parameter dimension when it is known without reading files.
    pub fn dim(&self) -> Option<usize> {
        self.input_dim()
            .map(|n| ModelSpec { kind: self.model, input_dim: n }.dim())
    }

    /// Resolves relative data paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DataSource::File { path, eval_path } = &mut self.data {
            if path.is_relative() {
                *path = base.join(&*path);
            }
            if let Some(p) = eval_path.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Option<RawModel>,
    data: Option<RawData>,
    federation: Option<RawFederation>,
    training: Option<RawTraining>,
    #[serde(default)]
    quantization: RawQuantization,
    #[serde(default)]
    diagnostics: RawDiagnostics,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: Option<String>,
    hidden: Option<usize>,
    classes: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    samples: Option<usize>,
    features: Option<usize>,
    noise: Option<f64>,
    eval_samples: Option<usize>,
    path: Option<PathBuf>,
    eval_path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFederation {
    clients: Option<usize>,
    partition: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    rounds: Option<u64>,
    local_steps: Option<u32>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    lr_decay: Option<f64>,
    lr_decay_every: Option<u64>,
    seed: Option<u64>,
    bit_budget: Option<u64>,
    loss_threshold: Option<f64>,
    stop_at_threshold: Option<bool>,
    loss_estimate_batch: Option<usize>,
    eval_every: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuantization {
    fixed: Option<RawFixed>,
    adaquant: Option<RawAdaquant>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFixed {
    bits: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdaquant {
    s0: Option<u32>,
    interval_bits: Option<u64>,
    s_max: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiagnostics {
    smoothness: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

fn required<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| Error::config(field, "required field is missing"))
}

fn positive<T: PartialOrd + Default + std::fmt::Display>(value: T, field: &str) -> Result<T> {
    if value > T::default() {
        Ok(value)
    } else {
        Err(Error::config(field, format!("must be positive, got {value}")))
    }
}

/// Parses and validates a TOML config, filling in defaults.
pub fn parse_config(text: &str) -> Result<TrainingConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let field = e
            .message()
            .split('`')
            .nth(1)
            .unwrap_or("document")
            .to_string();
        Error::config(field, e.message().trim().to_string())
    })?;

    let model = required(raw.model, "model")?;
    let kind = required(model.kind, "model.kind")?;
    let model_kind = match kind.as_str() {
        "quadratic" | "logistic" => {
            if model.hidden.is_some() || model.classes.is_some() {
                return Err(Error::config(
                    "model.hidden",
                    format!("hidden/classes only apply to kind = \"mlp\", not {kind:?}"),
                ));
            }
            if kind == "quadratic" {
                ModelKind::Quadratic
            } else {
                ModelKind::Logistic
            }
        }
        "mlp" => ModelKind::Mlp {
            hidden: positive(model.hidden.unwrap_or(DEFAULT_HIDDEN), "model.hidden")?,
            classes: match model.classes.unwrap_or(2) {
                c if c >= 2 => c,
                c => return Err(Error::config("model.classes", format!("need at least 2, got {c}"))),
            },
        },
        other => {
            return Err(Error::config(
                "model.kind",
                format!("unknown kind {other:?}; expected quadratic, logistic or mlp"),
            ))
        }
    };

    let data = required(raw.data, "data")?;
    let data = match (&data.path, data.samples.or(data.features)) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "data.path",
                "give either a file path or synthetic samples/features, not both",
            ))
        }
        (Some(path), None) => {
            if data.noise.is_some() || data.eval_samples.is_some() {
                return Err(Error::config("data.noise", "synthetic-only keys given with a file path"));
            }
            DataSource::File {
                path: path.clone(),
                eval_path: data.eval_path.clone(),
            }
        }
        (None, _) => {
            if data.eval_path.is_some() {
                return Err(Error::config("data.eval_path", "only valid together with data.path"));
            }
            let noise = data.noise.unwrap_or(0.0);
            if !(noise.is_finite() && noise >= 0.0) {
                return Err(Error::config("data.noise", format!("must be ≥ 0, got {noise}")));
            }
            if !matches!(model_kind, ModelKind::Quadratic) && noise > 1.0 {
                return Err(Error::config("data.noise", "label-flip probability must be ≤ 1"));
            }
            DataSource::Synthetic {
                samples: positive(required(data.samples, "data.samples")?, "data.samples")?,
                features: positive(required(data.features, "data.features")?, "data.features")?,
                noise,
                eval_samples: data.eval_samples.unwrap_or(0),
            }
        }
    };

    let fed = required(raw.federation, "federation")?;
    let clients = positive(required(fed.clients, "federation.clients")?, "federation.clients")?;
    if let DataSource::Synthetic { samples, .. } = data {
        if clients > samples {
            return Err(Error::config(
                "federation.clients",
                format!("{clients} clients but only {samples} samples"),
            ));
        }
    }
    let partition = match fed.partition.as_deref().unwrap_or("iid") {
        "iid" => PartitionMode::Iid,
        "sorted_label" => PartitionMode::SortedLabel,
        other => {
            return Err(Error::config(
                "federation.partition",
                format!("unknown mode {other:?}; expected iid or sorted_label"),
            ))
        }
    };

    let tr = required(raw.training, "training")?;
    let eta0 = tr.lr.unwrap_or(DEFAULT_LR);
    if !(eta0.is_finite() && eta0 > 0.0) {
        return Err(Error::config("training.lr", format!("must be positive, got {eta0}")));
    }
    let lr = match (tr.lr_decay, tr.lr_decay_every) {
        (None, None) => LrSchedule::Constant(eta0),
        (Some(factor), Some(period)) => {
            if !(factor > 0.0 && factor <= 1.0) {
                return Err(Error::config("training.lr_decay", format!("must be in (0, 1], got {factor}")));
            }
            LrSchedule::StepDecay {
                eta0,
                factor,
                period: positive(period, "training.lr_decay_every")?,
            }
        }
        (Some(_), None) => return Err(Error::config("training.lr_decay_every", "required with lr_decay")),
        (None, Some(_)) => return Err(Error::config("training.lr_decay", "required with lr_decay_every")),
    };
    let loss_threshold = tr.loss_threshold;
    if loss_threshold.is_some_and(|t| !t.is_finite()) {
        return Err(Error::config("training.loss_threshold", "must be finite"));
    }
    let stop_at_threshold = tr.stop_at_threshold.unwrap_or(false);
    if stop_at_threshold && loss_threshold.is_none() {
        return Err(Error::config("training.stop_at_threshold", "needs training.loss_threshold"));
    }

    let quant = match (raw.quantization.fixed, raw.quantization.adaquant) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "quantization",
                "choose one of [quantization.fixed] and [quantization.adaquant]",
            ))
        }
        (Some(fixed), None) => {
            let bits = required(fixed.bits, "quantization.fixed.bits")?;
            QuantMode::fixed_bits(bits).map_err(|e| Error::config("quantization.fixed.bits", e.to_string()))?;
            QuantConfig::Fixed { bits }
        }
        (None, ada) => {
            let ada = ada.unwrap_or_default();
            let s0 = positive(ada.s0.unwrap_or(crate::controller::DEFAULT_S0), "quantization.adaquant.s0")?;
            let s_max = ada.s_max.unwrap_or(crate::controller::DEFAULT_S_MAX);
            if s_max < s0 {
                return Err(Error::config(
                    "quantization.adaquant.s_max",
                    format!("must be at least s0 = {s0}, got {s_max}"),
                ));
            }
            let interval_bits = match ada.interval_bits {
                Some(b) => Some(positive(b, "quantization.adaquant.interval_bits")?),
                None => None,
            };
            QuantConfig::Adaptive { s0, interval_bits, s_max }
        }
    };

    let smoothness = raw.diagnostics.smoothness;
    if smoothness.is_some_and(|l| !(l.is_finite() && l > 0.0)) {
        return Err(Error::config("diagnostics.smoothness", "must be positive"));
    }

    let mut config = TrainingConfig {
        model: model_kind,
        data,
        clients,
        partition,
        local_steps: positive(tr.local_steps.unwrap_or(DEFAULT_LOCAL_STEPS), "training.local_steps")?,
        batch_size: positive(tr.batch_size.unwrap_or(DEFAULT_BATCH), "training.batch_size")?,
        lr,
        quant,
        rounds: required(tr.rounds, "training.rounds")?,
        bit_budget: tr.bit_budget,
        loss_threshold,
        stop_at_threshold,
        seed: tr.seed.unwrap_or(0),
        loss_estimate: match tr.loss_estimate_batch {
            Some(b) => LossEstimate::Minibatch(positive(b, "training.loss_estimate_batch")?),
            None => LossEstimate::Full,
        },
        eval_every: positive(tr.eval_every.unwrap_or(1), "training.eval_every")?,
        smoothness,
        output_dir: raw.output.dir,
    };
    // fill in the interval default now when d is known
    let dim = config.dim();
    if let (QuantConfig::Adaptive { interval_bits, .. }, Some(d)) = (&mut config.quant, dim) {
        interval_bits.get_or_insert(16 * d as u64);
    }
    Ok(config)
}

/// Reads and parses a config file; relative data paths resolve against the
/// file's directory.
pub fn load_config(path: &Path) -> Result<TrainingConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = parse_config(&text)?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(config)
}
