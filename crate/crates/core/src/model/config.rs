use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five training objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Definition to word vector.
    Revdic,
    /// Word vector to definition.
    Defmod,
    /// Word vector reconstruction.
    #[serde(rename = "wordae")]
    WordAe,
    /// Definition reconstruction.
    #[serde(rename = "defae")]
    DefAe,
    /// Distance between the shared encodings of a word and its definition.
    Sim,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Revdic,
        LossKind::Defmod,
        LossKind::WordAe,
        LossKind::DefAe,
        LossKind::Sim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Revdic => "revdic",
            LossKind::Defmod => "defmod",
            LossKind::WordAe => "wordae",
            LossKind::DefAe => "defae",
            LossKind::Sim => "sim",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss `{s}`")))
    }
}

/// A subset of [`LossKind`], iterated in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "Vec<LossKind>", from = "Vec<LossKind>")]
pub struct LossSet(u8);

impl LossSet {
    pub const EMPTY: LossSet = LossSet(0);
    pub const ALL: LossSet = LossSet(0b11111);

    pub fn of(kinds: &[LossKind]) -> Self {
        LossSet(kinds.iter().fold(0, |acc, k| acc | k.bit()))
    }

    pub fn contains(self, k: LossKind) -> bool {
        self.0 & k.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = LossKind> {
        LossKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }

    /// True when the word branch (`L_in` then `L_share`) is needed.
    pub fn needs_word_encoding(self) -> bool {
        self.contains(LossKind::Defmod) || self.contains(LossKind::WordAe) || self.contains(LossKind::Sim)
    }

    /// True when the definition branch (`T_in` then `L_share`) is needed.
    pub fn needs_definition_encoding(self) -> bool {
        self.contains(LossKind::Revdic) || self.contains(LossKind::DefAe) || self.contains(LossKind::Sim)
    }
}

impl From<LossSet> for Vec<LossKind> {
    fn from(s: LossSet) -> Self {
        s.iter().collect()
    }
}

impl From<Vec<LossKind>> for LossSet {
    fn from(v: Vec<LossKind>) -> Self {
        LossSet::of(&v)
    }
}

impl fmt::Display for LossSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(LossKind::name).collect();
        f.write_str(&names.join(","))
    }
}

impl std::str::FromStr for LossSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kinds = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<LossKind>>>()?;
        Ok(LossSet::of(&kinds))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Word-embedding dimension.
    pub d_w: usize,
    /// Definition token embedding dimension (Transformer model width).
    pub d_tok: usize,
    /// Shared-layer dimension.
    pub d_share: usize,
    /// Feed-forward inner width of each Transformer block.
    pub d_ff: usize,
    pub depth: usize,
    pub heads: usize,
    pub dropout_transformer: f64,
    pub dropout_linear: f64,
    pub dropout_token: f64,
    pub tie_embeddings: bool,
    pub active_losses: LossSet,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Table-style defaults for a given vocabulary and word dimension.
    pub fn new(vocab_size: usize, d_w: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_w,
            d_tok: 256,
            d_share: 256,
            d_ff: 1024,
            depth: 4,
            heads: 4,
            dropout_transformer: 0.3,
            dropout_linear: 0.2,
            dropout_token: 0.0,
            tie_embeddings: false,
            active_losses: LossSet::ALL,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.heads == 0 || !self.d_tok.is_multiple_of(self.heads) {
            return bad(format!("heads ({}) must divide d_tok ({})", self.heads, self.d_tok));
        }
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("d_w", self.d_w),
            ("d_tok", self.d_tok),
            ("d_share", self.d_share),
            ("d_ff", self.d_ff),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.vocab_size <= crate::data::NUM_SPECIALS {
            return bad("vocabulary has no regular tokens".into());
        }
        for (name, p) in [
            ("dropout_transformer", self.dropout_transformer),
            ("dropout_linear", self.dropout_linear),
            ("dropout_token", self.dropout_token),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if self.active_losses.is_empty() {
            return bad("active loss set is empty".into());
        }
        if self.layer_norm_eps <= 0.0 {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }
}
