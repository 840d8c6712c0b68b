//! Binary checkpoint container.
//!
//! Layout: magic, format version (u32 LE), payload length (u64 LE), payload,
//! SHA-256 of the payload. The payload holds a JSON header (configs, loop
//! state, history, vocabulary hash), the vocabulary text, and every named
//! parameter tensor as little-endian `f64`, followed by the Adam moments and
//! the best-so-far parameters. Floats are stored as raw bits, so a save/load
//! round trip is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::history::TrainHistory;
use super::trainer::{Progress, Trainer};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, UnifiedModel};
use crate::numerics::{AdamState, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"DICTNETC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocabulary,
    pub model: UnifiedModel,
    pub train_config: TrainConfig,
    pub adam: AdamState,
    pub history: TrainHistory,
    pub progress: Progress,
    pub best: Option<ParamStore>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    progress: Progress,
    history: TrainHistory,
    vocab_hash: String,
    adam_step: u64,
    adam_lr: f64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_weight_decay: f64,
    adam_epsilon: f64,
    has_best: bool,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer, vocab: &Vocabulary) -> Self {
        Checkpoint {
            vocab: vocab.clone(),
            model: t.model.clone(),
            train_config: t.config.clone(),
            adam: t.adam.clone(),
            history: t.history.clone(),
            progress: t.progress.clone(),
            best: t.best.clone(),
        }
    }

    /// A trainer that continues exactly where this checkpoint left off.
    pub fn into_trainer(self) -> Trainer {
        Trainer::restore(
            self.train_config,
            self.model,
            self.adam,
            self.history,
            self.progress,
            self.best,
        )
    }

    /// The model with its best validated parameters.
    pub fn best_model(&self) -> UnifiedModel {
        let mut m = self.model.clone();
        if let Some(p) = &self.best {
            *m.params_mut() = p.clone();
        }
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let a = &self.adam;
        let header = Header {
            model: self.model.config.clone(),
            train: self.train_config.clone(),
            progress: self.progress.clone(),
            history: self.history.clone(),
            vocab_hash: self.vocab.content_hash(),
            adam_step: a.step,
            adam_lr: a.lr,
            adam_beta1: a.beta1,
            adam_beta2: a.beta2,
            adam_weight_decay: a.weight_decay,
            adam_epsilon: a.epsilon,
            has_best: self.best.is_some(),
        };
        let mut w = Writer::default();
        w.bytes(&serde_json::to_vec(&header).expect("header serializes"));
        w.bytes(self.vocab.to_text().as_bytes());
        let params = self.model.params();
        w.u64(params.len() as u64);
        for id in params.ids() {
            let t = params.tensor(id);
            w.bytes(params.name(id).as_bytes());
            w.u64(t.shape().len() as u64);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.floats(t.data());
        }
        for buf in a.m.iter().chain(&a.v) {
            w.floats(buf);
        }
        if let Some(best) = &self.best {
            for id in best.ids() {
                w.floats(best.tensor(id).data());
            }
        }
        let payload = w.0;
        let mut out = Vec::with_capacity(payload.len() + 52);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        if bytes.len() != 20 + len + 32 {
            return Err(bad("truncated or corrupt checkpoint"));
        }
        let payload = &bytes[20..20 + len];
        if Sha256::digest(payload).as_slice() != &bytes[20 + len..] {
            return Err(bad("checksum mismatch: checkpoint is corrupt"));
        }
        let mut r = Reader { buf: payload, pos: 0 };
        let header: Header =
            serde_json::from_slice(r.bytes()?).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let vocab_text = std::str::from_utf8(r.bytes()?).map_err(|_| bad("vocabulary is not UTF-8"))?;
        let vocab = Vocabulary::from_text(vocab_text)?;
        if vocab.content_hash() != header.vocab_hash {
            return Err(bad("embedded vocabulary does not match its recorded hash"));
        }

        let count = r.u64()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = std::str::from_utf8(r.bytes()?)
                .map_err(|_| bad("parameter name is not UTF-8"))?
                .to_string();
            let ndim = r.u64()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let data = r.floats()?;
            store.register(
                name,
                Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?,
            )?;
        }
        let model = UnifiedModel::from_params(header.model, store)?;

        let mut moments = Vec::with_capacity(2 * count);
        for i in 0..2 * count {
            let buf = r.floats()?;
            if buf.len()
                != model
                    .params()
                    .tensor(model.params().ids().nth(i % count).expect("id"))
                    .len()
            {
                return Err(bad("optimizer state does not match parameters"));
            }
            moments.push(buf);
        }
        let v = moments.split_off(count);
        let adam = AdamState {
            step: header.adam_step,
            lr: header.adam_lr,
            beta1: header.adam_beta1,
            beta2: header.adam_beta2,
            weight_decay: header.adam_weight_decay,
            epsilon: header.adam_epsilon,
            m: moments,
            v,
        };
        let best = if header.has_best {
            let mut best = model.params().clone();
            for id in model.params().ids().collect::<Vec<_>>() {
                let data = r.floats()?;
                let t = best.tensor_mut(id);
                if data.len() != t.len() {
                    return Err(bad("best parameters do not match the model"));
                }
                t.data_mut().copy_from_slice(&data);
            }
            Some(best)
        } else {
            None
        };
        if r.pos != payload.len() {
            return Err(bad("trailing bytes in checkpoint"));
        }
        Ok(Checkpoint {
            vocab,
            model,
            train_config: header.train,
            adam,
            history: header.history,
            progress: header.progress,
            best,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint; with `vocab`, also requires that the checkpoint
    /// was trained with exactly that vocabulary.
    pub fn load(path: &Path, vocab: Option<&Vocabulary>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck = Self::from_bytes(&bytes)?;
        if let Some(v) = vocab {
            let (want, got) = (v.content_hash(), ck.vocab.content_hash());
            if want != got {
                return Err(Error::Checkpoint(format!(
                    "vocabulary hash mismatch: checkpoint has {got}, supplied vocabulary is {want}"
                )));
            }
        }
        Ok(ck)
    }
}

pub fn save_checkpoint(trainer: &Trainer, vocab: &Vocabulary, path: &Path) -> Result<()> {
    Checkpoint::from_trainer(trainer, vocab).save(path)
}

pub fn load_checkpoint(path: &Path, vocab: Option<&Vocabulary>) -> Result<Checkpoint> {
    Checkpoint::load(path, vocab)
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }

    fn floats(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }

    fn floats(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad length".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
