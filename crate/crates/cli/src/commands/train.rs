use std::path::{Path, PathBuf};

use dictnet_core::data::{build_whitespace_vocab, encode_entries, Vocabulary};
use dictnet_core::model::UnifiedModel;
use dictnet_core::training::{load_checkpoint, Checkpoint, Trainer};

use super::{create_dir, load_entries, load_table};
use crate::config::RawConfig;
use crate::error::CliError;
use crate::manifest::RunManifest;

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub resume: Option<PathBuf>,
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let mut raw = match &args.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    raw.apply_overrides(&args.overrides)?;
    let cfg = raw.resolve()?;

    let table = load_table(cfg.embeddings.as_deref())?;
    let train = load_entries(&cfg.train_path, table.as_ref(), None)?;
    let d_w = train[0].word_vector.len();
    let dev = load_entries(&cfg.dev_path, table.as_ref(), Some(d_w))?;
    let vocab = match &cfg.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => {
            let texts: Vec<String> = train
                .iter()
                .map(|e| {
                    let t = e.definition_text();
                    if cfg.lowercase {
                        t.to_lowercase()
                    } else {
                        t
                    }
                })
                .collect();
            build_whitespace_vocab(texts.iter().map(String::as_str))
        }
    };
    let train_enc = encode_entries(&train, &vocab, cfg.lowercase);
    let dev_enc = encode_entries(&dev, &vocab, cfg.lowercase);
    log::info!(
        "{} train / {} dev entries, vocabulary {}, d_w {d_w}",
        train.len(),
        dev.len(),
        vocab.len()
    );

    let mut trainer = match &args.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p, Some(&vocab))?;
            if ckpt.train_config != cfg.train {
                log::warn!("resuming with the training settings stored in {}", p.display());
            }
            ckpt.into_trainer()
        }
        None => {
            let model = UnifiedModel::new(cfg.model.build(vocab.len(), d_w, &cfg.train), cfg.train.seed)?;
            log::info!("{} parameters", model.parameter_count());
            Trainer::new(model, cfg.train.clone())?
        }
    };
    trainer.run(&train_enc, &dev_enc)?;

    let out = &cfg.output_dir;
    create_dir(out)?;
    let ckpt_path = out.join("model.ckpt");
    let history_path = out.join("history.csv");
    let vocab_path = out.join("vocab.txt");
    Checkpoint::from_trainer(&trainer, &vocab).save(&ckpt_path)?;
    trainer.history.save_csv(&history_path)?;
    vocab.save(&vocab_path)?;

    let mut manifest = RunManifest::new("train", raw.values().clone(), cfg.train.seed);
    manifest.input("train", &cfg.train_path)?;
    manifest.input("dev", &cfg.dev_path)?;
    for (role, p) in [
        ("embeddings", &cfg.embeddings),
        ("vocab", &cfg.vocab),
        ("resume", &args.resume),
    ] {
        if let Some(p) = p {
            manifest.input(role, p)?;
        }
    }
    manifest.output("checkpoint", &ckpt_path)?;
    manifest.output("history", &history_path)?;
    manifest.output("vocab", &vocab_path)?;
    manifest.save(&out.join("manifest.json"))?;

    report(&trainer, out);
    Ok(())
}

fn report(trainer: &Trainer, out: &Path) {
    let n = trainer.history.len();
    match trainer.best_record() {
        Some(best) => println!(
            "best validation: epoch {} step {} dev loss {:.6} ({n} validations)",
            best.epoch, best.step, best.dev.total
        ),
        None => println!("no validation after the initial one ({n} validations)"),
    }
    println!("artifacts written to {}", out.display());
}
