//! From-scratch neural relevance scorers.
//!
//! Three model kinds share one token-id space and one embedding table:
//! a small post-LN transformer cross-encoder over `[CLS] q [SEP] s [SEP]`,
//! QRANN (attention context vector plus a feed-forward layer) and the
//! dot-product model (bilinear attention, then `e_q . c`).

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_params, probe};
pub use model::{attention_trace, forward, forward_cross_encoder, forward_dot_product, forward_qrann};
pub use tensor::{Params, Tensor};
pub use train::{bce_loss, train, train_with, EpochStats, Example, Hyper, Schedule};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const NUM_SPECIAL: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CrossEncoder,
    Qrann,
    DotProduct,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::CrossEncoder, ModelKind::Qrann, ModelKind::DotProduct];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CrossEncoder => "cross_encoder",
            ModelKind::Qrann => "qrann",
            ModelKind::DotProduct => "dot_product",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind `{s}`")))
    }
}

/// Architecture hyperparameters. Vocabulary sizes exclude the four
/// special tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub english_vocab: usize,
    pub foreign_vocab: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Toy defaults: 32 dims, 2 layers, 2 heads, 64-wide FFN, 32 positions.
    pub fn toy(kind: ModelKind, english_vocab: usize, foreign_vocab: usize, seed: u64) -> Self {
        ModelConfig {
            kind,
            english_vocab,
            foreign_vocab,
            embed_dim: 32,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 64,
            max_seq_len: 32,
            seed,
        }
    }

    pub fn vocab_size(&self) -> usize {
        NUM_SPECIAL + self.english_vocab + self.foreign_vocab
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive");
        }
        if self.kind == ModelKind::CrossEncoder {
            if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
                return bad("embed_dim must be divisible by num_heads");
            }
            if self.num_layers == 0 {
                return bad("num_layers must be positive");
            }
        }
        if self.kind != ModelKind::DotProduct && self.ffn_dim == 0 {
            return bad("ffn_dim must be positive");
        }
        if self.max_seq_len < 4 {
            return bad("max_seq_len must be at least 4");
        }
        Ok(())
    }
}

/// English and foreign token strings mapped into the shared id space:
/// English ids follow the specials, foreign ids follow English.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenMap {
    english: Vec<String>,
    foreign: Vec<String>,
    english_index: HashMap<String, usize>,
    foreign_index: HashMap<String, usize>,
}

impl TokenMap {
    pub fn new(english: Vec<String>, foreign: Vec<String>) -> Result<Self> {
        let index = |side: &[String], kind: &'static str| -> Result<HashMap<String, usize>> {
            let mut m = HashMap::with_capacity(side.len());
            for (i, t) in side.iter().enumerate() {
                if m.insert(t.clone(), i).is_some() {
                    return Err(Error::DuplicateId { kind, id: t.clone() });
                }
            }
            Ok(m)
        };
        Ok(TokenMap {
            english_index: index(&english, "english token")?,
            foreign_index: index(&foreign, "foreign token")?,
            english,
            foreign,
        })
    }

    pub fn english_len(&self) -> usize {
        self.english.len()
    }

    pub fn foreign_len(&self) -> usize {
        self.foreign.len()
    }

    pub fn english_id(&self, token: &str) -> usize {
        self.english_index.get(token).map_or(UNK, |i| NUM_SPECIAL + i)
    }

    pub fn foreign_id(&self, token: &str) -> usize {
        self.foreign_index
            .get(token)
            .map_or(UNK, |i| NUM_SPECIAL + self.english.len() + i)
    }

    pub fn token(&self, id: usize) -> &str {
        match id {
            PAD => "[PAD]",
            UNK => "[UNK]",
            CLS => "[CLS]",
            SEP => "[SEP]",
            _ => {
                let i = id - NUM_SPECIAL;
                if i < self.english.len() {
                    &self.english[i]
                } else {
                    self.foreign.get(i - self.english.len()).map_or("[UNK]", String::as_str)
                }
            }
        }
    }

    /// Companion vocabulary file: `en<TAB>token` then `fr<TAB>token`, in id order.
    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for t in &self.english {
            writeln!(out, "en\t{t}")?;
        }
        for t in &self.foreign {
            writeln!(out, "fr\t{t}")?;
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut english = Vec::new();
        let mut foreign = Vec::new();
        for (i, line) in text.lines().enumerate() {
            match line.split_once('\t') {
                Some(("en", t)) if !t.is_empty() => english.push(t.to_string()),
                Some(("fr", t)) if !t.is_empty() => foreign.push(t.to_string()),
                _ => return Err(Error::parse(origin, i + 1, "expected `en|fr<TAB>token`")),
            }
        }
        TokenMap::new(english, foreign)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TokenMap::parse(&text, path)
    }
}

/// A checkpoint and its vocabulary, scoring `p(q|s)` for retrieval.
/// Unknown query terms and foreign tokens map to UNK.
pub struct SentenceModel {
    pub ckpt: Checkpoint,
    pub tokens: TokenMap,
}

impl SentenceModel {
    pub fn new(ckpt: Checkpoint, tokens: TokenMap) -> Result<Self> {
        let c = &ckpt.config;
        if c.english_vocab != tokens.english_len() || c.foreign_vocab != tokens.foreign_len() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary has {}+{} tokens but the checkpoint expects {}+{}",
                tokens.english_len(),
                tokens.foreign_len(),
                c.english_vocab,
                c.foreign_vocab
            )));
        }
        Ok(SentenceModel { ckpt, tokens })
    }

    pub fn load(checkpoint: impl AsRef<Path>, vocab: impl AsRef<Path>) -> Result<Self> {
        SentenceModel::new(Checkpoint::load(checkpoint)?, TokenMap::load(vocab)?)
    }

    pub fn encode(&self, term: &str, sentence: &[String]) -> (usize, Vec<usize>) {
        let s = sentence.iter().map(|t| self.tokens.foreign_id(t)).collect();
        (self.tokens.english_id(term), s)
    }
}

impl crate::ranker::SentenceScorer for SentenceModel {
    fn score_sentence(&self, term: &str, sentence: &[String]) -> Result<f64> {
        let (q, s) = self.encode(term, sentence);
        forward(&self.ckpt, q, &s)
    }
}

/// A packed `[CLS] q [SEP] s [SEP]` sequence padded to `max_seq_len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedInput {
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    pub positions: Vec<usize>,
    pub mask: Vec<u8>,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of real (unmasked) tokens.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// The foreign token ids, without separators or padding.
    pub fn foreign(&self) -> &[usize] {
        &self.tokens[3..self.real_len() - 1]
    }
}

/// Longest foreign side that fits in `max_seq_len`.
pub fn max_foreign_len(max_seq_len: usize) -> usize {
    max_seq_len.saturating_sub(4)
}

/// Packs one query id and foreign ids, truncating the tail of `s` to fit.
pub fn pack_input(q: usize, s: &[usize], max_seq_len: usize) -> Result<PackedInput> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty foreign sentence".into()));
    }
    if max_seq_len < 4 {
        return Err(Error::InvalidArgument("max_seq_len must be at least 4".into()));
    }
    let s = &s[..s.len().min(max_foreign_len(max_seq_len))];
    let mut tokens = Vec::with_capacity(max_seq_len);
    tokens.extend([CLS, q, SEP]);
    tokens.extend_from_slice(s);
    tokens.push(SEP);
    let real = tokens.len();
    let mut segments = vec![0; max_seq_len];
    segments[3..real].iter_mut().for_each(|x| *x = 1);
    tokens.resize(max_seq_len, PAD);
    let mut mask = vec![0; max_seq_len];
    mask[..real].iter_mut().for_each(|x| *x = 1);
    Ok(PackedInput {
        tokens,
        segments,
        positions: (0..max_seq_len).collect(),
        mask,
    })
}
