use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, ValidateEvery};
use super::history::{TrainHistory, ValidationRecord};
use crate::data::{make_batches, EncodedEntry};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{mix_seed, BatchOptions, LossBundle, LossKind, LossSet, UnifiedModel};
use crate::numerics::{adam_step, AdamState, ParamStore};

/// Batch size used for evaluation passes; it does not affect the results.
pub const EVAL_BATCH: usize = 256;

/// Patience-based stopping on a loss where lower is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub bad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NotImproved,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            bad: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> Verdict {
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.bad = 0;
            return Verdict::Improved;
        }
        self.bad += 1;
        if self.bad >= self.patience {
            Verdict::Stop
        } else {
            Verdict::NotImproved
        }
    }
}

/// Loop counters that a checkpoint needs to continue a run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub epochs_done: usize,
    pub step: u64,
    pub stopping: EarlyStopping,
    /// Index into the history of the best validation so far.
    pub best_record: Option<usize>,
    pub stopped: bool,
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    mix_seed(seed ^ 0x5348_5546, epoch as u64)
}

fn dropout_seed(seed: u64, step: u64) -> u64 {
    mix_seed(seed ^ 0x4452_4f50, step)
}

/// Mean of each active loss over `entries`: embedding losses averaged over
/// entries, token losses over target tokens. Dropout is off.
pub fn validate(
    model: &UnifiedModel,
    entries: &[EncodedEntry],
    active: LossSet,
    execution: Execution,
) -> Result<LossBundle> {
    if active.is_empty() {
        return Err(Error::Config("active loss set is empty".into()));
    }
    if entries.is_empty() {
        return Err(Error::invalid("validate", "no entries"));
    }
    let n = entries.len() as f64;
    let tokens: usize = entries.iter().map(|e| e.ids.len() - 1).sum();
    let mut values = [None; 5];
    let opts = BatchOptions {
        active,
        dropout_seed: None,
        with_grad: false,
        execution,
    };
    for batch in make_batches(entries, EVAL_BATCH, None)? {
        let out = model.run_batch(&batch, &opts)?;
        for (slot, k) in values.iter_mut().zip(LossKind::ALL) {
            let Some(v) = out.losses.get(k) else { continue };
            let w = match k {
                LossKind::Defmod | LossKind::DefAe => batch.target_tokens() as f64 / tokens as f64,
                _ => batch.len() as f64 / n,
            };
            *slot = Some(slot.unwrap_or(0.0) + v * w);
        }
    }
    Ok(LossBundle::from_values(values))
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: UnifiedModel,
    pub adam: AdamState,
    pub history: TrainHistory,
    pub progress: Progress,
    /// Parameters at the best validation.
    pub best: Option<ParamStore>,
    started: Instant,
}

impl Trainer {
    /// The preset decides the model's active losses.
    pub fn new(mut model: UnifiedModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.config.active_losses = config.preset.losses();
        let adam = AdamState::new(model.params(), config.lr, config.weight_decay);
        Ok(Trainer {
            history: TrainHistory::new(model.config.active_losses),
            progress: Progress {
                epochs_done: 0,
                step: 0,
                stopping: EarlyStopping::new(config.patience),
                best_record: None,
                stopped: false,
            },
            best: None,
            started: Instant::now(),
            config,
            model,
            adam,
        })
    }

    pub(crate) fn restore(
        config: TrainConfig,
        model: UnifiedModel,
        adam: AdamState,
        history: TrainHistory,
        progress: Progress,
        best: Option<ParamStore>,
    ) -> Self {
        Trainer {
            config,
            model,
            adam,
            history,
            progress,
            best,
            started: Instant::now(),
        }
    }

    pub fn active(&self) -> LossSet {
        self.model.config.active_losses
    }

    pub fn is_finished(&self) -> bool {
        self.progress.stopped || self.progress.epochs_done >= self.config.max_epochs
    }

    /// Trains until early stopping or `max_epochs`.
    pub fn run(&mut self, train: &[EncodedEntry], dev: &[EncodedEntry]) -> Result<()> {
        self.run_until(self.config.max_epochs, train, dev)
    }

    /// Trains until `epochs` epochs are done (or the run stops earlier).
    pub fn run_until(&mut self, epochs: usize, train: &[EncodedEntry], dev: &[EncodedEntry]) -> Result<()> {
        if train.is_empty() || dev.is_empty() {
            return Err(Error::invalid("train", "training and dev sets must be non-empty"));
        }
        if self.history.is_empty() {
            self.record(0, train, dev)?;
        }
        while !self.is_finished() && self.progress.epochs_done < epochs {
            self.train_epoch(train, dev)?;
        }
        Ok(())
    }

    fn train_epoch(&mut self, train: &[EncodedEntry], dev: &[EncodedEntry]) -> Result<()> {
        let epoch = self.progress.epochs_done + 1;
        let batches = make_batches(
            train,
            self.config.batch_size,
            Some(shuffle_seed(self.config.seed, epoch)),
        )?;
        for batch in &batches {
            let opts = BatchOptions {
                active: self.active(),
                dropout_seed: Some(dropout_seed(self.config.seed, self.progress.step)),
                with_grad: true,
                execution: self.config.execution,
            };
            let out = self.model.run_batch(batch, &opts)?;
            for (k, v) in out.losses.iter() {
                if !v.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step: self.progress.step as usize,
                        loss: k.name(),
                        value: v,
                    });
                }
            }
            let params = self.model.params_mut();
            params.accumulate(&out.grads.expect("gradients requested"));
            adam_step(params, &mut self.adam)?;
            params.zero_grad();
            self.progress.step += 1;
            if let ValidateEvery::Steps(n) = self.config.validate_every {
                if self.progress.step.is_multiple_of(n) && self.observe(epoch, train, dev)? {
                    break;
                }
            }
        }
        self.progress.epochs_done = epoch;
        if self.config.validate_every == ValidateEvery::Epoch {
            self.observe(epoch, train, dev)?;
        }
        Ok(())
    }

    fn record(&mut self, epoch: usize, train: &[EncodedEntry], dev: &[EncodedEntry]) -> Result<()> {
        let active = self.active();
        let record = ValidationRecord {
            epoch,
            step: self.progress.step,
            train: validate(&self.model, train, active, self.config.execution)?,
            dev: validate(&self.model, dev, active, self.config.execution)?,
        };
        if !record.dev.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: self.progress.step as usize,
                loss: "dev_total",
                value: record.dev.total,
            });
        }
        log::info!(
            "epoch {epoch} step {}: train {:.6} dev {:.6}",
            record.step,
            record.train.total,
            record.dev.total
        );
        self.history.push(record, self.started.elapsed());
        Ok(())
    }

    /// Validates, updates the best snapshot and the stopping rule. Returns
    /// true when training should stop.
    fn observe(&mut self, epoch: usize, train: &[EncodedEntry], dev: &[EncodedEntry]) -> Result<bool> {
        self.record(epoch, train, dev)?;
        let idx = self.history.len() - 1;
        match self.progress.stopping.observe(self.history.records()[idx].monitored()) {
            Verdict::Improved => {
                self.progress.best_record = Some(idx);
                self.best = Some(self.model.params().clone());
            }
            Verdict::NotImproved => {}
            Verdict::Stop => self.progress.stopped = true,
        }
        Ok(self.progress.stopped)
    }

    pub fn best_record(&self) -> Option<&ValidationRecord> {
        self.progress.best_record.map(|i| &self.history.records()[i])
    }

    /// The model at the best validation, or the current one if none yet.
    pub fn best_model(&self) -> UnifiedModel {
        let mut m = self.model.clone();
        if let Some(p) = &self.best {
            *m.params_mut() = p.clone();
        }
        m
    }

    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    pub fn finish(self) -> (UnifiedModel, TrainHistory) {
        (self.best_model(), self.history)
    }
}

/// Trains with early stopping and returns the best model and its history.
pub fn train(
    model: UnifiedModel,
    train_set: &[EncodedEntry],
    dev_set: &[EncodedEntry],
    config: &TrainConfig,
) -> Result<(UnifiedModel, TrainHistory)> {
    let mut t = Trainer::new(model, config.clone())?;
    t.run(train_set, dev_set)?;
    Ok(t.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_rule() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(1.0), Verdict::Improved);
        assert_eq!(s.observe(1.5), Verdict::Stop);

        let mut s = EarlyStopping::new(3);
        let seq = [5.0, 4.0, 4.0, 4.5, 3.0, 3.5, 3.2, 3.1];
        let got: Vec<Verdict> = seq.iter().map(|&v| s.observe(v)).collect();
        use Verdict::*;
        assert_eq!(
            got,
            [
                Improved,
                Improved,
                NotImproved,
                NotImproved,
                Improved,
                NotImproved,
                NotImproved,
                Stop
            ]
        );
        assert_eq!(s.best, Some(3.0));
    }

    #[test]
    fn seeds_are_distinct_per_epoch_and_step() {
        assert_ne!(shuffle_seed(1, 1), shuffle_seed(1, 2));
        assert_ne!(dropout_seed(1, 0), dropout_seed(1, 1));
        assert_ne!(shuffle_seed(1, 1), dropout_seed(1, 1));
    }
}
