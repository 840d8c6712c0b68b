use std::fmt::Write as _;

use super::config::{TaskPreset, TrainConfig};
use super::history::{fmt_loss, TrainHistory};
use super::trainer::Trainer;
use crate::data::{make_batches, EncodedEntry};
use crate::error::Result;
use crate::model::{BatchOptions, LossKind, ModelConfig, UnifiedModel};

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub preset: TaskPreset,
    pub history: TrainHistory,
    /// Largest absolute gradient, over one pass of the training set, of any
    /// parameter that no active loss reaches. Exactly zero when the model
    /// is wired correctly.
    pub excluded_grad_max: f64,
    pub excluded_params: usize,
}

#[derive(Debug, Clone)]
pub struct Ablation {
    pub runs: Vec<AblationRun>,
}

/// Largest absolute gradient over the parameters excluded by the preset.
pub fn excluded_path_gradient(
    model: &UnifiedModel,
    entries: &[EncodedEntry],
    config: &TrainConfig,
) -> Result<(f64, usize)> {
    let active = config.preset.losses();
    let excluded = model.excluded_params(active);
    let mut worst: f64 = 0.0;
    for batch in make_batches(entries, config.batch_size, None)? {
        let opts = BatchOptions {
            active,
            dropout_seed: Some(config.seed),
            with_grad: true,
            execution: config.execution,
        };
        let grads = model.run_batch(&batch, &opts)?.grads.expect("gradients requested");
        for &id in &excluded {
            if let Some(g) = grads.get(id) {
                worst = g.iter().fold(worst, |m, v| m.max(v.abs()));
            }
        }
    }
    Ok((worst, excluded.len()))
}

/// Trains one model per preset, all from the same initialization.
pub fn run_ablation(
    model_config: &ModelConfig,
    train: &[EncodedEntry],
    dev: &[EncodedEntry],
    presets: &[TaskPreset],
    config: &TrainConfig,
) -> Result<Ablation> {
    let mut runs = Vec::with_capacity(presets.len());
    for &preset in presets {
        let cfg = TrainConfig {
            preset,
            ..config.clone()
        };
        let mut model_config = model_config.clone();
        model_config.active_losses = preset.losses();
        let model = UnifiedModel::new(model_config, config.seed)?;
        let (excluded_grad_max, excluded_params) = excluded_path_gradient(&model, train, &cfg)?;
        let mut trainer = Trainer::new(model, cfg)?;
        trainer.run(train, dev)?;
        runs.push(AblationRun {
            preset,
            history: trainer.history,
            excluded_grad_max,
            excluded_params,
        });
    }
    Ok(Ablation { runs })
}

impl Ablation {
    /// Long-format table: one row per validation per preset, with the
    /// monitored dev loss and every dev loss the preset trains.
    pub fn table(&self, delimiter: char) -> String {
        let d = delimiter.to_string();
        let mut cols = vec!["preset", "epoch", "monitored"];
        cols.extend(LossKind::ALL.iter().map(|k| k.name()));
        let mut out = cols.join(&d);
        out.push('\n');
        for run in &self.runs {
            for r in run.history.records() {
                let mut row = vec![run.preset.to_string(), r.epoch.to_string(), fmt_loss(r.monitored())];
                row.extend(
                    LossKind::ALL
                        .iter()
                        .map(|&k| r.dev.get(k).map(fmt_loss).unwrap_or_default()),
                );
                let _ = writeln!(out, "{}", row.join(&d));
            }
        }
        out
    }
}
