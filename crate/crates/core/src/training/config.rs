use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{LossKind, LossSet};

/// Named task subsets for the ablation study, or any custom subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskPreset {
    RevdicOnly,
    DefmodOnly,
    /// Reverse dictionary, definition modelling and the similarity loss.
    ThreeTask,
    FiveTask,
    Custom(LossSet),
}

impl TaskPreset {
    pub const ABLATION: [TaskPreset; 4] = [
        TaskPreset::RevdicOnly,
        TaskPreset::DefmodOnly,
        TaskPreset::ThreeTask,
        TaskPreset::FiveTask,
    ];

    pub fn losses(self) -> LossSet {
        match self {
            TaskPreset::RevdicOnly => LossSet::of(&[LossKind::Revdic]),
            TaskPreset::DefmodOnly => LossSet::of(&[LossKind::Defmod]),
            TaskPreset::ThreeTask => LossSet::of(&[LossKind::Revdic, LossKind::Defmod, LossKind::Sim]),
            TaskPreset::FiveTask => LossSet::ALL,
            TaskPreset::Custom(s) => s,
        }
    }
}

impl fmt::Display for TaskPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskPreset::RevdicOnly => f.write_str("1-task-revdic"),
            TaskPreset::DefmodOnly => f.write_str("1-task-defmod"),
            TaskPreset::ThreeTask => f.write_str("3-task"),
            TaskPreset::FiveTask => f.write_str("5-task"),
            TaskPreset::Custom(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for TaskPreset {
    type Err = Error;

    /// A preset name, or a comma-separated list of losses.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "1-task-revdic" => TaskPreset::RevdicOnly,
            "1-task-defmod" => TaskPreset::DefmodOnly,
            "3-task" => TaskPreset::ThreeTask,
            "5-task" => TaskPreset::FiveTask,
            other => {
                let set: LossSet = other.parse()?;
                if set.is_empty() {
                    return Err(Error::Config("task preset selects no losses".into()));
                }
                TaskPreset::Custom(set)
            }
        })
    }
}

impl TryFrom<String> for TaskPreset {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TaskPreset> for String {
    fn from(p: TaskPreset) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ValidateEvery {
    Epoch,
    Steps(u64),
}

impl fmt::Display for ValidateEvery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidateEvery::Epoch => f.write_str("epoch"),
            ValidateEvery::Steps(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for ValidateEvery {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "epoch" => Ok(ValidateEvery::Epoch),
            n => match n.parse::<u64>() {
                Ok(n) if n > 0 => Ok(ValidateEvery::Steps(n)),
                _ => Err(Error::Config(format!(
                    "validate_every must be `epoch` or a positive step count, got `{s}`"
                ))),
            },
        }
    }
}

impl TryFrom<String> for ValidateEvery {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ValidateEvery> for String {
    fn from(v: ValidateEvery) -> String {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive non-improving validations tolerated before stopping.
    pub patience: usize,
    pub validate_every: ValidateEvery,
    pub seed: u64,
    pub preset: TaskPreset,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-6,
            batch_size: 256,
            max_epochs: 100,
            patience: 5,
            validate_every: ValidateEvery::Epoch,
            seed: 0,
            preset: TaskPreset::FiveTask,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be a non-negative number, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.preset.losses().is_empty() {
            return Err(Error::Config("task preset selects no losses".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_expand_and_round_trip() {
        assert_eq!(TaskPreset::ThreeTask.losses().to_string(), "revdic,defmod,sim");
        assert_eq!(TaskPreset::FiveTask.losses(), LossSet::ALL);
        for p in TaskPreset::ABLATION {
            assert_eq!(p.to_string().parse::<TaskPreset>().unwrap(), p);
        }
        let custom: TaskPreset = "sim,revdic".parse().unwrap();
        assert_eq!(custom.to_string(), "revdic,sim");
        assert!("".parse::<TaskPreset>().is_err());
        assert!("revdic,bogus".parse::<TaskPreset>().is_err());
        let json = serde_json::to_string(&TaskPreset::ThreeTask).unwrap();
        assert_eq!(json, "\"3-task\"");
    }

    #[test]
    fn config_invariants() {
        let ok = TrainConfig::default();
        assert_eq!(ok.lr, 1e-4);
        assert_eq!(ok.patience, 5);
        ok.validate().unwrap();
        assert!(TrainConfig {
            patience: 0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr: f64::NAN,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert_eq!("epoch".parse::<ValidateEvery>().unwrap(), ValidateEvery::Epoch);
        assert_eq!("25".parse::<ValidateEvery>().unwrap(), ValidateEvery::Steps(25));
        assert!("0".parse::<ValidateEvery>().is_err());
    }
}
