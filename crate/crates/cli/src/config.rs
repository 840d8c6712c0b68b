//! Flat `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dictnet_core::exec::Execution;
use dictnet_core::model::ModelConfig;
use dictnet_core::training::{TaskPreset, TrainConfig, ValidateEvery};

use crate::error::CliError;

/// Every accepted key with its default. An empty default means unset.
const KEYS: &[(&str, &str)] = &[
    ("data.train", ""),
    ("data.dev", ""),
    ("data.embeddings", ""),
    ("data.vocab", ""),
    ("data.lowercase", "false"),
    ("model.d_tok", "256"),
    ("model.d_share", "256"),
    ("model.d_ff", "1024"),
    ("model.depth", "4"),
    ("model.heads", "4"),
    ("model.dropout_transformer", "0.3"),
    ("model.dropout_linear", "0.2"),
    ("model.dropout_token", "0"),
    ("model.tie_embeddings", "false"),
    ("model.layer_norm_eps", "0.00001"),
    ("train.lr", "0.0001"),
    ("train.weight_decay", "0.000001"),
    ("train.batch_size", "256"),
    ("train.max_epochs", "100"),
    ("train.patience", "5"),
    ("train.validate_every", "epoch"),
    ("train.seed", "0"),
    ("train.preset", "5-task"),
    ("train.execution", "parallel"),
    ("output.dir", "run"),
];

/// Key/value pairs after defaults, file values and overrides are merged.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

fn unknown(key: &str) -> CliError {
    CliError::Usage(format!("unknown config key `{key}`"))
}

fn split_pair(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RawConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut cfg = RawConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line)
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            if let Some(prev) = seen.insert(k.to_string(), i + 1) {
                return Err(CliError::Usage(format!(
                    "{origin}:{}: key `{k}` already set on line {prev}",
                    i + 1
                )));
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(unknown(key)),
        }
    }

    /// Applies `key=value` command-line overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for o in overrides {
            let (k, v) = split_pair(o).ok_or_else(|| CliError::Usage(format!("override `{o}` is not `key=value`")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = &self.values[key];
        v.parse()
            .map_err(|e| CliError::Usage(format!("config key `{key}`: cannot parse `{v}`: {e}")))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = &self.values[key];
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    fn required(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key)
            .ok_or_else(|| CliError::Usage(format!("config key `{key}` is required")))
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let train = TrainConfig {
            lr: self.get("train.lr")?,
            weight_decay: self.get("train.weight_decay")?,
            batch_size: self.get("train.batch_size")?,
            max_epochs: self.get("train.max_epochs")?,
            patience: self.get("train.patience")?,
            validate_every: self.get::<ValidateEvery>("train.validate_every")?,
            seed: self.get("train.seed")?,
            preset: self.get::<TaskPreset>("train.preset")?,
            execution: self.get::<Execution>("train.execution")?,
        };
        train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(RunConfig {
            train_path: self.required("data.train")?,
            dev_path: self.required("data.dev")?,
            embeddings: self.path("data.embeddings"),
            vocab: self.path("data.vocab"),
            lowercase: self.get("data.lowercase")?,
            model: ModelShape {
                d_tok: self.get("model.d_tok")?,
                d_share: self.get("model.d_share")?,
                d_ff: self.get("model.d_ff")?,
                depth: self.get("model.depth")?,
                heads: self.get("model.heads")?,
                dropout_transformer: self.get("model.dropout_transformer")?,
                dropout_linear: self.get("model.dropout_linear")?,
                dropout_token: self.get("model.dropout_token")?,
                tie_embeddings: self.get("model.tie_embeddings")?,
                layer_norm_eps: self.get("model.layer_norm_eps")?,
            },
            train,
            output_dir: self.required("output.dir")?,
        })
    }
}

/// Model hyper-parameters that do not depend on the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub d_tok: usize,
    pub d_share: usize,
    pub d_ff: usize,
    pub depth: usize,
    pub heads: usize,
    pub dropout_transformer: f64,
    pub dropout_linear: f64,
    pub dropout_token: f64,
    pub tie_embeddings: bool,
    pub layer_norm_eps: f64,
}

impl ModelShape {
    pub fn build(&self, vocab_size: usize, d_w: usize, train: &TrainConfig) -> ModelConfig {
        ModelConfig {
            d_tok: self.d_tok,
            d_share: self.d_share,
            d_ff: self.d_ff,
            depth: self.depth,
            heads: self.heads,
            dropout_transformer: self.dropout_transformer,
            dropout_linear: self.dropout_linear,
            dropout_token: self.dropout_token,
            tie_embeddings: self.tie_embeddings,
            layer_norm_eps: self.layer_norm_eps,
            active_losses: train.preset.losses(),
            ..ModelConfig::new(vocab_size, d_w)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_path: PathBuf,
    pub dev_path: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub lowercase: bool,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}
