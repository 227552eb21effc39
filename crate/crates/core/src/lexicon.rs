//! Lexical translation tables `p(e|f)` estimated with IBM Model 1 EM.
//!
//! Tokens are interned and every co-occurring (foreign, english) pair gets a
//! slot in one flat probability array, so each EM pass is a walk over
//! precomputed slot indices. Counts are accumulated in corpus order and rows
//! are normalized in slot order, which makes training bitwise reproducible.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::BitextPair;
use crate::error::{Error, Result};
use crate::format_sig17;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Model1Options {
    pub iterations: usize,
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
    /// Prepend an empty foreign token to every sentence.
    pub use_null: bool,
}

impl Default for Model1Options {
    fn default() -> Self {
        Model1Options {
            iterations: 5,
            tol: 1e-4,
            use_null: true,
        }
    }
}

pub const DEFAULT_PRUNE_MIN_PROB: f64 = 1e-3;

type Row = BTreeMap<String, f64>;

/// Per-foreign-token distributions over English tokens.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TranslationTable {
    rows: BTreeMap<String, Row>,
    /// Mass the NULL token assigns to each English token. Not part of the
    /// wire format.
    null_row: Row,
    pub trained_iterations: usize,
    pub final_log_likelihood: f64,
}

impl TranslationTable {
    /// Builds a table from explicit `(foreign, english, probability)` triples.
    pub fn from_entries<I, F, E>(entries: I) -> Self
    where
        I: IntoIterator<Item = (F, E, f64)>,
        F: Into<String>,
        E: Into<String>,
    {
        let mut rows: BTreeMap<String, Row> = BTreeMap::new();
        for (f, e, p) in entries {
            rows.entry(f.into()).or_default().insert(e.into(), p);
        }
        TranslationTable {
            rows,
            ..Default::default()
        }
    }

    /// `p(q|f)`, zero when the pair is absent.
    pub fn lookup(&self, f: &str, q: &str) -> f64 {
        self.rows
            .get(f)
            .and_then(|row| row.get(q))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn row(&self, f: &str) -> Option<&BTreeMap<String, f64>> {
        self.rows.get(f)
    }

    pub fn null_row(&self) -> &BTreeMap<String, f64> {
        &self.null_row
    }

    pub fn foreign_tokens(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The most probable English token for `f`, ties to the smaller token.
    pub fn best_translation(&self, f: &str) -> Option<(&str, f64)> {
        self.rows.get(f)?.iter().fold(None, |best, (e, &p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((e.as_str(), p)),
        })
    }

    /// Drops entries below `min_prob` without renormalizing.
    pub fn prune(&self, min_prob: f64) -> Result<TranslationTable> {
        if !(0.0..1.0).contains(&min_prob) {
            return Err(Error::InvalidArgument(format!(
                "min_prob must be in [0, 1), got {min_prob}"
            )));
        }
        let keep = |row: &Row| -> Row {
            row.iter()
                .filter(|(_, &p)| p >= min_prob)
                .map(|(e, &p)| (e.clone(), p))
                .collect()
        };
        Ok(TranslationTable {
            rows: self
                .rows
                .iter()
                .map(|(f, row)| (f.clone(), keep(row)))
                .filter(|(_, row)| !row.is_empty())
                .collect(),
            null_row: keep(&self.null_row),
            trained_iterations: self.trained_iterations,
            final_log_likelihood: self.final_log_likelihood,
        })
    }

    /// `foreign<TAB>english<TAB>probability`, sorted by foreign token, then
    /// descending probability, then english token.
    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (f, row) in &self.rows {
            let mut entries: Vec<(&String, f64)> = row.iter().map(|(e, &p)| (e, p)).collect();
            entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            for (e, p) in entries {
                writeln!(out, "{f}\t{e}\t{}", format_sig17(p))?;
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("table is UTF-8")
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (index, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [f, e, p] = fields[..] else {
                return Err(Error::parse(
                    origin,
                    index + 1,
                    "expected foreign<TAB>english<TAB>probability",
                ));
            };
            let p: f64 = p
                .trim()
                .parse()
                .ok()
                .filter(|p| (0.0..=1.0).contains(p))
                .ok_or_else(|| Error::parse(origin, index + 1, format!("bad probability `{p}`")))?;
            entries.push((f, e, p));
        }
        Ok(TranslationTable::from_entries(entries))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TranslationTable::parse(&text, path)
    }
}

/// Interned corpus with one slot per co-occurring (foreign, english) pair.
struct SlotCorpus {
    foreign: Vec<String>,
    english: Vec<String>,
    /// Slot range of each foreign id.
    row_start: Vec<usize>,
    /// English id of each slot.
    slot_english: Vec<u32>,
    /// Per pair: number of foreign positions and the row-major slot matrix
    /// (foreign position x english position).
    sentences: Vec<(usize, Vec<u32>)>,
    null_id: Option<u32>,
}

impl SlotCorpus {
    fn build(pairs: &[BitextPair], use_null: bool) -> SlotCorpus {
        fn intern(map: &mut HashMap<String, u32>, names: &mut Vec<String>, tok: &str) -> u32 {
            if let Some(&id) = map.get(tok) {
                return id;
            }
            let id = names.len() as u32;
            map.insert(tok.to_string(), id);
            names.push(tok.to_string());
            id
        }

        let mut fmap = HashMap::new();
        let mut emap = HashMap::new();
        let mut foreign = Vec::new();
        let mut english = Vec::new();
        let null_id = use_null.then(|| {
            foreign.push(String::new());
            0u32
        });

        let mut interned: Vec<(Vec<u32>, Vec<u32>)> = Vec::with_capacity(pairs.len());
        for p in pairs {
            let mut f: Vec<u32> = null_id.into_iter().collect();
            f.extend(p.foreign.iter().map(|t| intern(&mut fmap, &mut foreign, t)));
            let e: Vec<u32> = p
                .english
                .iter()
                .map(|t| intern(&mut emap, &mut english, t))
                .collect();
            interned.push((f, e));
        }

        let mut cooc: Vec<Vec<u32>> = vec![Vec::new(); foreign.len()];
        for (f, e) in &interned {
            for &fi in f {
                cooc[fi as usize].extend_from_slice(e);
            }
        }
        let mut row_start = Vec::with_capacity(foreign.len() + 1);
        let mut slot_english = Vec::new();
        for row in &mut cooc {
            row.sort_unstable();
            row.dedup();
            row_start.push(slot_english.len());
            slot_english.extend_from_slice(row);
        }
        row_start.push(slot_english.len());

        let sentences = interned
            .iter()
            .map(|(f, e)| {
                let mut slots = Vec::with_capacity(f.len() * e.len());
                for &fi in f {
                    let row = &slot_english[row_start[fi as usize]..row_start[fi as usize + 1]];
                    for &ej in e {
                        let k = row.binary_search(&ej).expect("co-occurrence recorded");
                        slots.push((row_start[fi as usize] + k) as u32);
                    }
                }
                (f.len(), slots)
            })
            .collect();

        SlotCorpus {
            foreign,
            english,
            row_start,
            slot_english,
            sentences,
            null_id,
        }
    }

    /// Expected counts under `t` added into `counts`; returns the corpus
    /// log-likelihood under `t`.
    fn e_step(&self, t: &[f64], counts: &mut [f64]) -> f64 {
        let mut ll = 0.0;
        for (lf, slots) in &self.sentences {
            let le = slots.len() / lf;
            for j in 0..le {
                let mut denom = 0.0;
                for i in 0..*lf {
                    denom += t[slots[i * le + j] as usize];
                }
                ll += (denom / *lf as f64).ln();
                for i in 0..*lf {
                    let s = slots[i * le + j] as usize;
                    counts[s] += t[s] / denom;
                }
            }
        }
        ll
    }

    fn m_step(&self, counts: &[f64], t: &mut [f64]) {
        for f in 0..self.foreign.len() {
            let range = self.row_start[f]..self.row_start[f + 1];
            let total: f64 = counts[range.clone()].iter().sum();
            for s in range {
                t[s] = counts[s] / total;
            }
        }
    }

    fn row(&self, f: usize, t: &[f64]) -> Row {
        (self.row_start[f]..self.row_start[f + 1])
            .map(|s| (self.english[self.slot_english[s] as usize].clone(), t[s]))
            .collect()
    }
}

/// Trains `p(e|f)` and returns the table together with the log-likelihood
/// after each completed iteration.
pub fn train_model1(pairs: &[BitextPair], options: Model1Options) -> Result<(TranslationTable, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if options.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    let corpus = SlotCorpus::build(pairs, options.use_null);

    // Uniform over the english tokens each foreign token co-occurs with.
    let mut t = vec![0.0; corpus.slot_english.len()];
    for f in 0..corpus.foreign.len() {
        let range = corpus.row_start[f]..corpus.row_start[f + 1];
        let uniform = 1.0 / range.len() as f64;
        t[range].fill(uniform);
    }

    let mut counts = vec![0.0; t.len()];
    let mut previous = corpus.e_step(&t, &mut counts);
    let mut history = Vec::with_capacity(options.iterations);
    for _ in 0..options.iterations {
        corpus.m_step(&counts, &mut t);
        counts.fill(0.0);
        let ll = corpus.e_step(&t, &mut counts);
        history.push(ll);
        if ll - previous < options.tol {
            break;
        }
        previous = ll;
    }

    let mut rows = BTreeMap::new();
    let mut null_row = Row::new();
    for f in 0..corpus.foreign.len() {
        if Some(f as u32) == corpus.null_id {
            null_row = corpus.row(f, &t);
        } else {
            rows.insert(corpus.foreign[f].clone(), corpus.row(f, &t));
        }
    }
    let table = TranslationTable {
        rows,
        null_row,
        trained_iterations: history.len(),
        final_log_likelihood: *history.last().expect("at least one iteration"),
    };
    Ok((table, history))
}
