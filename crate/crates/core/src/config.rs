//! Run configuration: every hyperparameter and ablation switch.
//!
//! The on-disk form is a flat `key = value` document with `#` comments.
//! Unknown keys are rejected and omitted keys take the reference defaults
//! (`graph_dim = 256`, `lambda = 9`, `steps = 3`, `margin = 0.2`, ...).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: key `{key}` has no value")]
    MissingValue { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("key `{key}` out of range: {reason}")]
    OutOfRange { key: String, reason: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

macro_rules! choice {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
        pub enum $name { $($variant),+ }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok(Self::$variant),)+
                    other => Err(format!("`{other}` is not one of: {}", [$($text),+].join(", "))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }
    };
}

choice! {
    /// Which modality attends over the other when building local alignments.
    Direction { T2I => "t2i", I2T => "i2t" }
}

choice! {
    /// Vector similarity representations, or the scalar-cosine ablation.
    SimilarityMode { Vector => "vector", Scalar => "scalar" }
}

choice! {
    /// Scoring heads carried by a model.
    Branch { Sgr => "sgr", Saf => "saf", Joint => "joint", Ave => "ave" }
}

choice! {
    /// One shared model with summed losses, or two fully separate models.
    Strategy { Joint => "joint", Split => "split" }
}

choice! {
    /// Axis along which rectified cosines are ℓ2-normalized before the
    /// temperature softmax. `Queries` normalizes across the attending items
    /// for each attended item (words per region under t2i).
    NormAxis { Queries => "queries", Context => "context" }
}

choice! {
    /// Sample set for the filtration batch norm during training.
    BnPooling { Batch => "batch", Pair => "pair" }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub d_raw: usize,
    pub regions: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub graph_dim: usize,
    pub attn_hidden: usize,
    pub lambda: f64,
    pub steps: usize,
    pub margin: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_epoch: usize,
    pub lr_decay: f64,
    pub epochs: usize,
    pub epochs_sgr: Option<usize>,
    pub epochs_saf: Option<usize>,
    pub direction: Direction,
    pub similarity: SimilarityMode,
    pub branch: Branch,
    pub strategy: Strategy,
    pub use_global: bool,
    pub use_local: bool,
    pub normalize_features: bool,
    pub norm_axis: NormAxis,
    pub bn_pooling: BnPooling,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d_raw: 2048,
            regions: 36,
            embed_dim: 300,
            hidden_dim: 1024,
            graph_dim: 256,
            attn_hidden: 128,
            lambda: 9.0,
            steps: 3,
            margin: 0.2,
            batch_size: 128,
            learning_rate: 2e-4,
            lr_decay_epoch: 10,
            lr_decay: 0.1,
            epochs: 20,
            epochs_sgr: None,
            epochs_saf: None,
            direction: Direction::T2I,
            similarity: SimilarityMode::Vector,
            branch: Branch::Joint,
            strategy: Strategy::Joint,
            use_global: true,
            use_local: true,
            normalize_features: true,
            norm_axis: NormAxis::Queries,
            bn_pooling: BnPooling::Batch,
            seed: 0,
            threads: 1,
        }
    }
}

pub const KEYS: &[&str] = &[
    "d_raw",
    "regions",
    "embed_dim",
    "hidden_dim",
    "graph_dim",
    "attn_hidden",
    "lambda",
    "steps",
    "margin",
    "batch_size",
    "learning_rate",
    "lr_decay_epoch",
    "lr_decay",
    "epochs",
    "epochs_sgr",
    "epochs_saf",
    "direction",
    "similarity",
    "branch",
    "strategy",
    "use_global",
    "use_local",
    "normalize_features",
    "norm_axis",
    "bn_pooling",
    "seed",
    "threads",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        }),
    }
}

impl RunConfig {
    /// Desk-scale dimensions used by tests and the synthetic corpus.
    pub fn toy() -> Self {
        Self {
            d_raw: 32,
            regions: 8,
            embed_dim: 16,
            hidden_dim: 32,
            graph_dim: 16,
            attn_hidden: 16,
            batch_size: 10,
            learning_rate: 2e-3,
            lr_decay_epoch: 40,
            epochs: 50,
            ..Self::default()
        }
    }

    /// Dimension of one similarity node: `graph_dim`, or 1 for scalar cosines.
    pub fn node_dim(&self) -> usize {
        match self.similarity {
            SimilarityMode::Vector => self.graph_dim,
            SimilarityMode::Scalar => 1,
        }
    }

    /// Learning rate for a 0-based epoch under the step-decay schedule.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.lr_decay_epoch {
            self.learning_rate
        } else {
            self.learning_rate * self.lr_decay
        }
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "d_raw" => self.d_raw = parse(key, value)?,
            "regions" => self.regions = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "graph_dim" => self.graph_dim = parse(key, value)?,
            "attn_hidden" => self.attn_hidden = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "margin" => self.margin = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "lr_decay_epoch" => self.lr_decay_epoch = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "epochs_sgr" => self.epochs_sgr = Some(parse(key, value)?),
            "epochs_saf" => self.epochs_saf = Some(parse(key, value)?),
            "direction" => self.direction = parse(key, value)?,
            "similarity" => self.similarity = parse(key, value)?,
            "branch" => self.branch = parse(key, value)?,
            "strategy" => self.strategy = parse(key, value)?,
            "use_global" => self.use_global = parse_bool(key, value)?,
            "use_local" => self.use_local = parse_bool(key, value)?,
            "normalize_features" => self.normalize_features = parse_bool(key, value)?,
            "norm_axis" => self.norm_axis = parse(key, value)?,
            "bn_pooling" => self.bn_pooling = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |key: &str, ok: bool, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange {
                    key: key.to_string(),
                    reason: reason.to_string(),
                })
            }
        };
        for (key, v) in [
            ("d_raw", self.d_raw),
            ("regions", self.regions),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("graph_dim", self.graph_dim),
            ("attn_hidden", self.attn_hidden),
            ("threads", self.threads),
        ] {
            range(key, v >= 1, "must be at least 1")?;
        }
        range("lambda", self.lambda > 0.0 && self.lambda.is_finite(), "must be > 0")?;
        range("steps", self.steps >= 1, "must be at least 1")?;
        range("margin", self.margin > 0.0 && self.margin.is_finite(), "must be > 0")?;
        range("batch_size", self.batch_size >= 2, "hardest negatives need at least 2")?;
        range(
            "learning_rate",
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            "must be >= 0",
        )?;
        range("lr_decay", self.lr_decay > 0.0 && self.lr_decay <= 1.0, "must lie in (0, 1]")?;
        range("epochs", self.epochs >= 1, "must be at least 1")?;
        range(
            "use_local",
            self.use_global || self.use_local,
            "at least one of use_global/use_local must be on",
        )?;
        Ok(())
    }

    /// Parses a `key = value` document over the defaults and validates it.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a `key = value` document on top of `self` without validating.
    pub fn apply_str(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
            if value.is_empty() {
                return Err(ConfigError::MissingValue {
                    line: i + 1,
                    key: key.to_string(),
                });
            }
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Serializes to the `key = value` form accepted by [`RunConfig::parse_str`].
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        push("d_raw", self.d_raw.to_string());
        push("regions", self.regions.to_string());
        push("embed_dim", self.embed_dim.to_string());
        push("hidden_dim", self.hidden_dim.to_string());
        push("graph_dim", self.graph_dim.to_string());
        push("attn_hidden", self.attn_hidden.to_string());
        push("lambda", self.lambda.to_string());
        push("steps", self.steps.to_string());
        push("margin", self.margin.to_string());
        push("batch_size", self.batch_size.to_string());
        push("learning_rate", self.learning_rate.to_string());
        push("lr_decay_epoch", self.lr_decay_epoch.to_string());
        push("lr_decay", self.lr_decay.to_string());
        push("epochs", self.epochs.to_string());
        if let Some(e) = self.epochs_sgr {
            push("epochs_sgr", e.to_string());
        }
        if let Some(e) = self.epochs_saf {
            push("epochs_saf", e.to_string());
        }
        push("direction", self.direction.to_string());
        push("similarity", self.similarity.to_string());
        push("branch", self.branch.to_string());
        push("strategy", self.strategy.to_string());
        push("use_global", self.use_global.to_string());
        push("use_local", self.use_local.to_string());
        push("normalize_features", self.normalize_features.to_string());
        push("norm_axis", self.norm_axis.to_string());
        push("bn_pooling", self.bn_pooling.to_string());
        push("seed", self.seed.to_string());
        push("threads", self.threads.to_string());
        out
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| ConfigError::Io(format!("{}: {e}", path.as_ref().display())))?;
    RunConfig::parse_str(&text)
}
