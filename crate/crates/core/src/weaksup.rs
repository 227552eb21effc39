//! Weakly supervised (term, sentence) samples derived from bitext.
//!
//! Every non-stop English word type of a pair is a positive query for the
//! pair's foreign sentence. Each positive is followed by `neg_per_pos`
//! negatives: vocabulary words absent from the English side, drawn uniformly
//! without replacement.

use std::collections::{HashSet, VecDeque};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BitextPair, Vocabulary};
use crate::error::{Error, Result};

pub const DEFAULT_NEG_PER_POS: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSample {
    pub query: String,
    pub sentence: Vec<String>,
    pub label: bool,
    pub pair_id: u64,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord<'a> {
    q: std::borrow::Cow<'a, str>,
    s: Vec<std::borrow::Cow<'a, str>>,
    label: u8,
    pair_id: u64,
}

impl TrainingSample {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&SampleRecord {
            q: self.query.as_str().into(),
            s: self.sentence.iter().map(|t| t.as_str().into()).collect(),
            label: u8::from(self.label),
            pair_id: self.pair_id,
        })
        .expect("sample serializes")
    }
}

pub fn write_samples<W: Write>(out: &mut W, samples: &[TrainingSample]) -> std::io::Result<()> {
    for s in samples {
        writeln!(out, "{}", s.to_json())?;
    }
    Ok(())
}

pub fn parse_samples(text: &str, origin: &Path) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(origin, index + 1, e.to_string()))?;
        let label = match record.label {
            0 => false,
            1 => true,
            other => {
                return Err(Error::parse(
                    origin,
                    index + 1,
                    format!("label must be 0 or 1, got {other}"),
                ))
            }
        };
        if record.s.is_empty() {
            return Err(Error::parse(origin, index + 1, "empty sentence"));
        }
        out.push(TrainingSample {
            query: record.q.into_owned(),
            sentence: record.s.into_iter().map(|t| t.into_owned()).collect(),
            label,
            pair_id: record.pair_id,
        });
    }
    Ok(out)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<TrainingSample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_samples(&text, path)
}

/// Lazily generates samples pair by pair. Yields at most one error, after
/// which the stream is exhausted.
pub struct SampleStream<'a> {
    pairs: std::slice::Iter<'a, BitextPair>,
    vocab: &'a Vocabulary,
    /// Non-stop vocabulary ids, the only admissible queries.
    eligible: Vec<u32>,
    neg_per_pos: usize,
    rng: ChaCha8Rng,
    pending: VecDeque<TrainingSample>,
    failed: bool,
}

pub fn build_samples<'a>(
    pairs: &'a [BitextPair],
    vocab: &'a Vocabulary,
    neg_per_pos: usize,
    seed: u64,
) -> SampleStream<'a> {
    let eligible = vocab
        .entries()
        .iter()
        .filter(|e| !e.is_stopword)
        .map(|e| e.id)
        .collect();
    SampleStream {
        pairs: pairs.iter(),
        vocab,
        eligible,
        neg_per_pos,
        rng: ChaCha8Rng::seed_from_u64(seed),
        pending: VecDeque::new(),
        failed: false,
    }
}

impl SampleStream<'_> {
    fn expand(&mut self, pair: &BitextPair) -> Result<()> {
        let mut seen = HashSet::new();
        let positives: Vec<u32> = pair
            .english
            .iter()
            .filter_map(|t| self.vocab.get(t))
            .filter(|e| !e.is_stopword && seen.insert(e.id))
            .map(|e| e.id)
            .collect();
        if positives.is_empty() {
            return Ok(());
        }
        let present: HashSet<u32> = pair.english.iter().filter_map(|t| self.vocab.id(t)).collect();
        let absent_pool = self.eligible.len() - positives.len();
        if self.neg_per_pos > absent_pool {
            return Err(Error::NegativePoolExhausted {
                pair_id: pair.pair_id,
                wanted: self.neg_per_pos,
                available: absent_pool,
            });
        }
        for &id in &positives {
            self.pending.push_back(self.sample(pair, id, true));
            for neg in self.draw_negatives(&present, absent_pool) {
                self.pending.push_back(self.sample(pair, neg, false));
            }
        }
        Ok(())
    }

    fn draw_negatives(&mut self, present: &HashSet<u32>, absent_pool: usize) -> Vec<u32> {
        let k = self.neg_per_pos;
        if absent_pool <= 4 * k {
            // Small pool: partial Fisher-Yates over the explicit list.
            let mut pool: Vec<u32> = self
                .eligible
                .iter()
                .copied()
                .filter(|id| !present.contains(id))
                .collect();
            for i in 0..k {
                let j = self.rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(k);
            return pool;
        }
        let mut drawn = Vec::with_capacity(k);
        while drawn.len() < k {
            let id = self.eligible[self.rng.random_range(0..self.eligible.len())];
            if !present.contains(&id) && !drawn.contains(&id) {
                drawn.push(id);
            }
        }
        drawn
    }

    fn sample(&self, pair: &BitextPair, id: u32, label: bool) -> TrainingSample {
        TrainingSample {
            query: self.vocab.token(id).expect("id from vocabulary").to_string(),
            sentence: pair.foreign.clone(),
            label,
            pair_id: pair.pair_id,
        }
    }
}

impl Iterator for SampleStream<'_> {
    type Item = Result<TrainingSample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(s) = self.pending.pop_front() {
                return Some(Ok(s));
            }
            if self.failed {
                return None;
            }
            let pair = self.pairs.next()?;
            if let Err(e) = self.expand(pair) {
                self.failed = true;
                return Some(Err(e));
            }
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// True when `pair_id` lands in the dev bucket for this seed.
pub fn is_dev_pair(pair_id: u64, dev_fraction: f64, seed: u64) -> bool {
    let h = splitmix64(splitmix64(seed) ^ pair_id);
    ((h >> 11) as f64 / (1u64 << 53) as f64) < dev_fraction
}

/// Splits by origin pair so that all samples of one bitext stay together.
pub fn split_samples(
    samples: Vec<TrainingSample>,
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<TrainingSample>, Vec<TrainingSample>)> {
    if !(0.0..1.0).contains(&dev_fraction) {
        return Err(Error::InvalidArgument(format!(
            "dev_fraction must be in [0, 1), got {dev_fraction}"
        )));
    }
    Ok(samples
        .into_iter()
        .partition(|s| !is_dev_pair(s.pair_id, dev_fraction, seed)))
}
