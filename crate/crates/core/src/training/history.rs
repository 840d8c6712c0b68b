use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LossBundle, LossSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    /// Epoch in progress when validated; 0 is the untrained baseline.
    pub epoch: usize,
    pub step: u64,
    pub train: LossBundle,
    pub dev: LossBundle,
}

impl ValidationRecord {
    /// The monitored quantity: total active loss on dev.
    pub fn monitored(&self) -> f64 {
        self.dev.total
    }
}

/// Append-only validation log. Wall-clock times are kept alongside but are
/// not serialized or compared, so identical runs give identical histories.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub active: LossSet,
    records: Vec<ValidationRecord>,
    #[serde(skip)]
    wall: Vec<Duration>,
}

impl PartialEq for TrainHistory {
    fn eq(&self, other: &Self) -> bool {
        self.active == other.active && self.records == other.records
    }
}

impl TrainHistory {
    pub fn new(active: LossSet) -> Self {
        TrainHistory {
            active,
            records: Vec::new(),
            wall: Vec::new(),
        }
    }

    pub fn push(&mut self, record: ValidationRecord, elapsed: Duration) {
        debug_assert!(self.records.last().is_none_or(|r| r.epoch <= record.epoch));
        self.records.push(record);
        self.wall.push(elapsed);
    }

    pub fn records(&self) -> &[ValidationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Wall time since training started, per record; absent after a reload.
    pub fn wall_time(&self, i: usize) -> Option<Duration> {
        self.wall.get(i).copied()
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["epoch".to_string(), "step".to_string()];
        for split in ["train", "dev"] {
            cols.extend(self.active.iter().map(|k| format!("{split}_{k}")));
            cols.push(format!("{split}_total"));
        }
        cols
    }

    /// Delimiter-separated table, one row per validation.
    pub fn to_table(&self, delimiter: char) -> String {
        let mut out = self.header().join(&delimiter.to_string());
        out.push('\n');
        for r in &self.records {
            let mut row = vec![r.epoch.to_string(), r.step.to_string()];
            for b in [&r.train, &r.dev] {
                row.extend(self.active.iter().map(|k| fmt_loss(b.get(k).unwrap_or(f64::NAN))));
                row.push(fmt_loss(b.total));
            }
            let _ = writeln!(out, "{}", row.join(&delimiter.to_string()));
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_table(',')).map_err(|e| Error::io(path, e))
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_loss(v: f64) -> String {
    format!("{v:?}")
}
