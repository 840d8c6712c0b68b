use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Word-boundary marker prefixed to every word before sub-word segmentation.
pub const WORD_MARKER: char = '\u{2581}';

/// Rendering of `UNK` in decoded sub-word text. It is never a trained piece,
/// so re-encoding it yields `UNK` again.
pub const UNK_GLYPH: char = '\u{2047}';

const FORMAT_HEADER: &str = "dictnet-vocab 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabKind {
    /// One id per whitespace-separated token.
    Whitespace,
    /// Unigram language model over sub-word pieces.
    Unigram,
}

impl VocabKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VocabKind::Whitespace => "whitespace",
            VocabKind::Unigram => "unigram",
        }
    }
}

impl std::str::FromStr for VocabKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(VocabKind::Whitespace),
            "unigram" => Ok(VocabKind::Unigram),
            other => Err(Error::Config(format!("unknown vocabulary kind `{other}`"))),
        }
    }
}

/// Token inventory with the four reserved ids `PAD`, `BOS`, `EOS`, `UNK`
/// below every regular id.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    kind: VocabKind,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Piece log-probabilities (unigram only); zero for specials.
    log_probs: Vec<f64>,
    max_piece_chars: usize,
}

impl Vocabulary {
    fn from_parts(kind: VocabKind, regular: Vec<(String, f64)>) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut log_probs = vec![0.0; NUM_SPECIALS];
        let mut index = HashMap::new();
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            index.insert(s.to_string(), i);
        }
        let mut max_piece_chars = 1;
        for (tok, lp) in regular {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::invalid("vocabulary", format!("invalid token {tok:?}")));
            }
            if index.contains_key(&tok) {
                return Err(Error::invalid("vocabulary", format!("duplicate token {tok:?}")));
            }
            max_piece_chars = max_piece_chars.max(tok.chars().count());
            index.insert(tok.clone(), tokens.len());
            tokens.push(tok);
            log_probs.push(lp);
        }
        Ok(Vocabulary {
            kind,
            tokens,
            index,
            log_probs,
            max_piece_chars,
        })
    }

    /// Open vocabulary of every distinct whitespace token, ids in
    /// lexicographic order after the specials.
    pub fn whitespace<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = corpus
            .into_iter()
            .flat_map(str::split_whitespace)
            .filter(|t| !SPECIAL_TOKENS.contains(t))
            .collect();
        Self::from_parts(
            VocabKind::Whitespace,
            set.into_iter().map(|t| (t.to_string(), 0.0)).collect(),
        )
        .expect("whitespace tokens are valid and distinct")
    }

    /// Sub-word vocabulary from explicit pieces and log-probabilities, in
    /// the given id order.
    pub fn unigram_from_pieces(pieces: Vec<(String, f64)>) -> Result<Self> {
        if pieces.iter().any(|(p, _)| p.contains(UNK_GLYPH)) {
            return Err(Error::invalid("vocabulary", "pieces may not contain the UNK glyph"));
        }
        Self::from_parts(VocabKind::Unigram, pieces)
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn log_prob(&self, id: usize) -> f64 {
        self.log_probs[id]
    }

    /// Regular (non-special) tokens with their log-probabilities, in id order.
    pub fn pieces(&self) -> impl Iterator<Item = (&str, f64)> {
        self.tokens[NUM_SPECIALS..]
            .iter()
            .zip(&self.log_probs[NUM_SPECIALS..])
            .map(|(t, &l)| (t.as_str(), l))
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIALS
    }

    /// Token ids for `text`, without `BOS`/`EOS` framing.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        match self.kind {
            VocabKind::Whitespace => text
                .split_whitespace()
                .map(|t| match self.index.get(t) {
                    Some(&id) if id >= UNK => id,
                    _ => UNK,
                })
                .collect(),
            VocabKind::Unigram => text
                .split_whitespace()
                .flat_map(|w| self.segment(&format!("{WORD_MARKER}{w}")))
                .collect(),
        }
    }

    /// Text for `ids`; `PAD`, `BOS` and `EOS` are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let kept = ids.iter().filter(|&&id| id >= UNK && id < self.tokens.len());
        match self.kind {
            VocabKind::Whitespace => kept.map(|&id| self.tokens[id].as_str()).collect::<Vec<_>>().join(" "),
            VocabKind::Unigram => {
                let mut s = String::new();
                for &id in kept {
                    if id == UNK {
                        s.push(UNK_GLYPH);
                    } else {
                        s.push_str(&self.tokens[id]);
                    }
                }
                s.replace(WORD_MARKER, " ")
                    .split_whitespace()
                    .collect::<Vec<_>>()
                    .join(" ")
            }
        }
    }

    /// Maximum-probability segmentation of one string into piece ids. A
    /// character that no piece covers becomes `UNK`.
    pub fn segment(&self, s: &str) -> Vec<usize> {
        let chars: Vec<char> = s.chars().collect();
        let n = chars.len();
        if n == 0 {
            return Vec::new();
        }
        let unk_score = self.log_probs.iter().skip(NUM_SPECIALS).copied().fold(0.0, f64::min) - 10.0;
        let mut best = vec![f64::NEG_INFINITY; n + 1];
        let mut back: Vec<(usize, usize)> = vec![(0, UNK); n + 1];
        best[0] = 0.0;
        let mut buf = String::new();
        for end in 1..=n {
            for len in 1..=self.max_piece_chars.min(end) {
                let start = end - len;
                if best[start] == f64::NEG_INFINITY {
                    continue;
                }
                buf.clear();
                buf.extend(&chars[start..end]);
                if let Some(&id) = self.index.get(buf.as_str()) {
                    if id >= NUM_SPECIALS {
                        let score = best[start] + self.log_probs[id];
                        if score > best[end] {
                            best[end] = score;
                            back[end] = (start, id);
                        }
                    }
                }
            }
            if best[end] == f64::NEG_INFINITY {
                best[end] = best[end - 1] + unk_score;
                back[end] = (end - 1, UNK);
            }
        }
        let mut ids = Vec::new();
        let mut pos = n;
        while pos > 0 {
            let (start, id) = back[pos];
            ids.push(id);
            pos = start;
        }
        ids.reverse();
        ids
    }

    /// Sum of piece log-probabilities of a segmentation.
    pub fn segmentation_score(&self, ids: &[usize]) -> f64 {
        ids.iter().map(|&id| self.log_probs[id]).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{FORMAT_HEADER}").unwrap();
        writeln!(out, "kind {}", self.kind.as_str()).unwrap();
        writeln!(out, "specials {}", SPECIAL_TOKENS.join(" ")).unwrap();
        writeln!(out, "size {}", self.tokens.len()).unwrap();
        for (tok, lp) in self.pieces() {
            match self.kind {
                VocabKind::Whitespace => writeln!(out, "{tok}").unwrap(),
                VocabKind::Unigram => writeln!(out, "{tok}\t{lp}").unwrap(),
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Record {
            path: "<vocab>".into(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| bad(0, &format!("missing {what}")))
        };
        let (n, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(bad(n, &format!("unsupported header {header:?}")));
        }
        let (n, kind_line) = next("kind")?;
        let kind: VocabKind = kind_line
            .strip_prefix("kind ")
            .ok_or_else(|| bad(n, "expected `kind`"))?
            .parse()
            .map_err(|_| bad(n, "unknown kind"))?;
        let (n, specials) = next("specials")?;
        if specials != format!("specials {}", SPECIAL_TOKENS.join(" ")) {
            return Err(bad(n, "special tokens do not match"));
        }
        let (n, size_line) = next("size")?;
        let size: usize = size_line
            .strip_prefix("size ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(n, "expected `size <n>`"))?;
        let mut regular = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            let (tok, lp) = match kind {
                VocabKind::Whitespace => (line.to_string(), 0.0),
                VocabKind::Unigram => {
                    let (t, l) = line.split_once('\t').ok_or_else(|| bad(n, "expected piece<TAB>logp"))?;
                    let lp: f64 = l.parse().map_err(|_| bad(n, "bad log-probability"))?;
                    (t.to_string(), lp)
                }
            };
            regular.push((tok, lp));
        }
        if regular.len() + NUM_SPECIALS != size {
            return Err(bad(
                0,
                &format!("declared size {size}, found {}", regular.len() + NUM_SPECIALS),
            ));
        }
        Self::from_parts(kind, regular)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Record { line, msg, .. } => Error::Record {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })
    }

    /// SHA-256 of the serialized form, hex encoded.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_union_with_specials() {
        let v = Vocabulary::whitespace(["a b", "b c"]);
        assert_eq!(v.len(), 3 + NUM_SPECIALS);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));
        assert_eq!(v.id("c"), Some(6));
    }

    #[test]
    fn empty_corpus_has_only_specials() {
        let v = Vocabulary::whitespace(std::iter::empty());
        assert_eq!(v.len(), NUM_SPECIALS);
    }

    #[test]
    fn whitespace_rebuild_is_identical() {
        let corpus = ["zeta alpha", "beta alpha gamma"];
        assert_eq!(Vocabulary::whitespace(corpus), Vocabulary::whitespace(corpus));
    }

    #[test]
    fn whitespace_round_trip_and_unknowns() {
        let v = Vocabulary::whitespace(["a b"]);
        assert_eq!(v.decode(&v.encode("a b")), "a b");
        assert_eq!(v.encode("a zzz"), vec![4, UNK]);
        assert_eq!(v.encode("<s> </s> <pad>"), vec![UNK, UNK, UNK]);
        assert_eq!(v.decode(&[BOS, 4, EOS, PAD]), "a");
    }

    #[test]
    fn text_round_trip_both_kinds() {
        let w = Vocabulary::whitespace(["x y z"]);
        assert_eq!(Vocabulary::from_text(&w.to_text()).unwrap(), w);
        let u = Vocabulary::unigram_from_pieces(vec![
            ("▁ab".into(), -1.25),
            ("a".into(), -2.0 / 3.0),
            ("b".into(), -3.1),
            ("▁".into(), -0.1),
        ])
        .unwrap();
        let back = Vocabulary::from_text(&u.to_text()).unwrap();
        assert_eq!(back, u);
        assert_eq!(back.content_hash(), u.content_hash());
    }

    #[test]
    fn rejects_bad_header_and_size() {
        assert!(Vocabulary::from_text("nope\n").is_err());
        let w = Vocabulary::whitespace(["x"]).to_text().replace("size 5", "size 9");
        assert!(Vocabulary::from_text(&w).is_err());
    }

    #[test]
    fn unigram_uncovered_char_is_unk() {
        let u = Vocabulary::unigram_from_pieces(vec![("▁".into(), -1.0), ("a".into(), -1.0)]).unwrap();
        let ids = u.encode("aqa");
        assert_eq!(ids, vec![4, 5, UNK, 5]);
        assert_eq!(u.decode(&ids), format!("a{UNK_GLYPH}a"));
        assert_eq!(u.encode(&u.decode(&ids)), ids);
    }
}
