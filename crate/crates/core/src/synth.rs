//! Seeded cipher-language corpus with known ground truth.
//!
//! Every English word has exactly one foreign counterpart and sentences keep
//! their word order, so the translation table, the relevance judgments and
//! the alignment of every token are known exactly.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BitextPair, Document, DocumentRecord, Query, DEFAULT_STOPWORDS};
use crate::error::{Error, Result};
use crate::lexicon::TranslationTable;
use crate::metrics::Qrels;

const ENGLISH_STOPWORDS: &[&str] = &[
    "the", "a", "of", "and", "to", "in", "is", "on", "for", "with", "at", "by", "from", "as",
    "it", "was",
];
const ENGLISH_ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v"];
const ENGLISH_VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const FOREIGN_ONSETS: &[&str] = &["zh", "x", "q", "kw", "dz", "ts", "j", "ny", "gh", "vr"];
const FOREIGN_VOWELS: &[&str] = &["aa", "oe", "y", "ii", "uu", "ae"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// English vocabulary size, stopwords included.
    pub vocab_size: usize,
    pub stopwords: usize,
    pub bitext_pairs: usize,
    pub documents: usize,
    pub sentences_per_doc: usize,
    pub queries: usize,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    pub stopword_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 200,
            stopwords: 12,
            bitext_pairs: 2000,
            documents: 100,
            sentences_per_doc: 5,
            queries: 50,
            min_sentence_len: 4,
            max_sentence_len: 8,
            stopword_rate: 0.25,
            seed: 0,
        }
    }
}

/// A foreign document with the English sentences it was enciphered from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthDocument {
    pub document: Document,
    pub hidden: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    /// English words; stopwords come first.
    pub english: Vec<String>,
    /// `foreign[i]` enciphers `english[i]`.
    pub foreign: Vec<String>,
    pub stopword_count: usize,
    pub bitext: Vec<BitextPair>,
    pub documents: Vec<SynthDocument>,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthPaths {
    pub bitext: PathBuf,
    pub documents: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub cipher: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        SynthPaths {
            bitext: dir.join("bitext.tsv"),
            documents: dir.join("documents.jsonl"),
            queries: dir.join("queries.tsv"),
            qrels: dir.join("qrels.tsv"),
            cipher: dir.join("cipher.tsv"),
        }
    }
}

fn pseudo_words(
    rng: &mut ChaCha8Rng,
    onsets: &[&str],
    vowels: &[&str],
    count: usize,
    taken: &mut HashSet<String>,
) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(onsets[rng.random_range(0..onsets.len())]);
            w.push_str(vowels[rng.random_range(0..vowels.len())]);
        }
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl SynthCorpus {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        if config.stopwords > ENGLISH_STOPWORDS.len() || config.stopwords >= config.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "stopword count {} must be below the vocabulary size and at most {}",
                config.stopwords,
                ENGLISH_STOPWORDS.len()
            )));
        }
        if config.min_sentence_len == 0 || config.min_sentence_len > config.max_sentence_len {
            return Err(Error::InvalidArgument("bad sentence length range".into()));
        }
        if !(0.0..1.0).contains(&config.stopword_rate) {
            return Err(Error::InvalidArgument("stopword_rate must be in [0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut taken: HashSet<String> = DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect();
        let content_count = config.vocab_size - config.stopwords;
        let mut english: Vec<String> = ENGLISH_STOPWORDS[..config.stopwords].iter().map(|s| s.to_string()).collect();
        english.extend(pseudo_words(&mut rng, ENGLISH_ONSETS, ENGLISH_VOWELS, content_count, &mut taken));
        let foreign = pseudo_words(&mut rng, FOREIGN_ONSETS, FOREIGN_VOWELS, config.vocab_size, &mut taken);
        let stopword_count = config.stopwords;

        let sentence = |rng: &mut ChaCha8Rng| -> Vec<usize> {
            let len = rng.random_range(config.min_sentence_len..=config.max_sentence_len);
            (0..len)
                .map(|_| {
                    if stopword_count > 0 && rng.random_bool(config.stopword_rate) {
                        rng.random_range(0..stopword_count)
                    } else {
                        rng.random_range(stopword_count..config.vocab_size)
                    }
                })
                .collect()
        };
        let words = |ids: &[usize], side: &[String]| ids.iter().map(|&i| side[i].clone()).collect::<Vec<_>>();

        let bitext = (0..config.bitext_pairs)
            .map(|i| {
                let ids = sentence(&mut rng);
                BitextPair {
                    pair_id: i as u64,
                    foreign: words(&ids, &foreign),
                    english: words(&ids, &english),
                }
            })
            .collect();

        let width = config.documents.max(1).to_string().len().max(3);
        let mut documents = Vec::with_capacity(config.documents);
        let mut postings: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for d in 0..config.documents {
            let doc_id = format!("d{:0width$}", d + 1);
            let mut sentences = Vec::new();
            let mut hidden = Vec::new();
            for _ in 0..config.sentences_per_doc {
                let ids = sentence(&mut rng);
                for &i in ids.iter().filter(|&&i| i >= stopword_count) {
                    postings.entry(i).or_default().insert(doc_id.clone());
                }
                sentences.push(words(&ids, &foreign));
                hidden.push(words(&ids, &english));
            }
            documents.push(SynthDocument {
                document: Document { doc_id, sentences },
                hidden,
            });
        }

        let mut candidates: Vec<usize> = postings.keys().copied().collect();
        if candidates.len() < config.queries {
            return Err(Error::InvalidArgument(format!(
                "only {} content words occur in the documents, {} queries requested",
                candidates.len(),
                config.queries
            )));
        }
        candidates.shuffle(&mut rng);
        let width = config.queries.max(1).to_string().len().max(3);
        let mut queries = Vec::with_capacity(config.queries);
        let mut judged = BTreeMap::new();
        for (k, &word) in candidates[..config.queries].iter().enumerate() {
            let query_id = format!("q{:0width$}", k + 1);
            judged.insert(query_id.clone(), postings[&word].clone());
            queries.push(Query {
                query_id,
                terms: vec![english[word].clone()],
            });
        }

        Ok(SynthCorpus {
            english,
            foreign,
            stopword_count,
            bitext,
            documents,
            queries,
            qrels: Qrels::from_map(judged),
        })
    }

    /// The foreign counterpart of an English word.
    pub fn encipher(&self, english: &str) -> Option<&str> {
        self.english.iter().position(|e| e == english).map(|i| self.foreign[i].as_str())
    }

    /// The exact dictionary: `p(e|f) = 1` for every cipher pair.
    pub fn oracle_table(&self) -> TranslationTable {
        TranslationTable::from_entries(
            self.foreign
                .iter()
                .zip(&self.english)
                .map(|(f, e)| (f.as_str(), e.as_str(), 1.0)),
        )
    }

    pub fn plain_documents(&self) -> Vec<Document> {
        self.documents.iter().map(|d| d.document.clone()).collect()
    }

    pub fn write_bitext<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        crate::corpus::write_bitext(out, &self.bitext)
    }

    pub fn write_documents<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for d in &self.documents {
            let record = DocumentRecord {
                id: d.document.doc_id.clone(),
                sentences: d.document.sentences.iter().map(|s| s.join(" ")).collect(),
            };
            writeln!(out, "{}", serde_json::to_string(&record).expect("record serializes"))?;
        }
        Ok(())
    }

    pub fn write_queries<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for q in &self.queries {
            writeln!(out, "{}\t{}", q.query_id, q.terms.join(" "))?;
        }
        Ok(())
    }

    /// Writes the five corpus files into `dir`, which must exist.
    pub fn write_to_dir(&self, dir: &Path) -> Result<SynthPaths> {
        let paths = SynthPaths::in_dir(dir);
        let write = |path: &Path, body: &dyn Fn(&mut Vec<u8>) -> std::io::Result<()>| -> Result<()> {
            let mut buf = Vec::new();
            body(&mut buf).map_err(|e| Error::io(path, e))?;
            std::fs::write(path, buf).map_err(|e| Error::io(path, e))
        };
        write(&paths.bitext, &|b| self.write_bitext(b))?;
        write(&paths.documents, &|b| self.write_documents(b))?;
        write(&paths.queries, &|b| self.write_queries(b))?;
        write(&paths.qrels, &|b| b.write_all(self.qrels.to_tsv().as_bytes()))?;
        write(&paths.cipher, &|b| self.oracle_table().write(b))?;
        Ok(paths)
    }
}
