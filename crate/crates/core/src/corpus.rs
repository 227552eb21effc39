//! Text normalization and loaders for bitext, documents, queries and qrels.
//!
//! Every loader is strict about its wire format and reports the 1-based line
//! number of the first offending record. Loaded collections are plain owned
//! data and can be shared freely between threads.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};
use crate::metrics::Qrels;

/// How raw text is turned into tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Normalization {
    pub lowercase: bool,
    pub strip_edge_punctuation: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            lowercase: true,
            strip_edge_punctuation: true,
        }
    }
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Splits on Unicode whitespace, lowercases, and trims punctuation from both
/// ends of every token. Tokens that end up empty are dropped.
pub fn tokenize(raw: &str, rules: Normalization) -> Vec<String> {
    raw.split_whitespace()
        .filter_map(|piece| {
            let piece = if rules.lowercase {
                piece.to_lowercase()
            } else {
                piece.to_string()
            };
            let token = if rules.strip_edge_punctuation {
                piece.trim_matches(is_punctuation).to_string()
            } else {
                piece
            };
            (!token.is_empty()).then_some(token)
        })
        .collect()
}

/// Built-in English function words, used when no stopword file is given.
pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "herself",
    "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "might", "more", "most", "must", "my", "myself", "no", "nor", "not", "now", "of", "off",
    "on", "once", "only", "or", "other", "ought", "our", "ours", "ourselves", "out", "over", "own",
    "same", "shall", "she", "should", "so", "some", "such", "than", "that", "the", "their",
    "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those", "through",
    "to", "too", "under", "until", "up", "upon", "us", "very", "was", "we", "were", "what", "when",
    "where", "which", "while", "who", "whom", "whose", "why", "will", "with", "within", "without",
    "would", "yet", "you", "your", "yours", "yourself", "yourselves", "also", "although", "among",
    "around", "either", "else", "ever", "every", "however", "may", "much", "neither", "since",
    "though", "whether",
];

/// A set of English stopwords, already normalized.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn builtin() -> Self {
        DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()
    }

    pub fn empty() -> Self {
        Stopwords::default()
    }

    /// One token per line; blank lines are ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(text
            .lines()
            .flat_map(|line| tokenize(line, Normalization::default()))
            .collect())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<String> for Stopwords {
    fn from_iter<I: IntoIterator<Item = String>>(iter: I) -> Self {
        Stopwords(iter.into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabEntry {
    pub token: String,
    pub id: u32,
    pub frequency: u64,
    pub is_stopword: bool,
}

/// Dense token <-> id map. Ids run from 0 to `len() - 1` in order of
/// descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn get(&self, token: &str) -> Option<&VocabEntry> {
        self.id(token).map(|id| &self.entries[id as usize])
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(|e| e.token.as_str())
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.get(token).is_some_and(|e| e.is_stopword)
    }

    /// Rebuilds a vocabulary from explicit entries, in the given order.
    pub fn from_entries(entries: Vec<(String, u64, bool)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut out = Vec::with_capacity(entries.len());
        for (id, (token, frequency, is_stopword)) in entries.into_iter().enumerate() {
            if frequency == 0 {
                return Err(Error::InvalidArgument(format!(
                    "token `{token}` has zero frequency"
                )));
            }
            if index.insert(token.clone(), id as u32).is_some() {
                return Err(Error::DuplicateId {
                    kind: "vocabulary token",
                    id: token,
                });
            }
            out.push(VocabEntry {
                token,
                id: id as u32,
                frequency,
                is_stopword,
            });
        }
        Ok(Vocabulary {
            entries: out,
            index,
        })
    }
}

/// Counts tokens across `sides` and keeps those seen at least `min_freq` times.
pub fn build_vocabulary<'a, I>(sides: I, stopwords: &Stopwords, min_freq: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if min_freq == 0 {
        return Err(Error::InvalidArgument("min_freq must be at least 1".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for side in sides {
        for token in side {
            *counts.entry(token.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary { min_freq });
    }
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_entries(
        kept.into_iter()
            .map(|(t, c)| (t.to_string(), c, stopwords.contains(t)))
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitextPair {
    pub pair_id: u64,
    pub foreign: Vec<String>,
    pub english: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bitext {
    pub pairs: Vec<BitextPair>,
    /// Lines dropped because one side normalized to nothing.
    pub skipped: usize,
}

impl Bitext {
    pub fn english_sides(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|p| p.english.as_slice())
    }

    pub fn foreign_sides(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|p| p.foreign.as_slice())
    }
}

/// Parses `foreign<TAB>english` lines. `pair_id` is the 0-based line index.
pub fn parse_bitext(text: &str, origin: &Path) -> Result<Bitext> {
    let rules = Normalization::default();
    let mut bitext = Bitext::default();
    for (index, line) in text.lines().enumerate() {
        let mut fields = line.split('\t');
        let (Some(foreign), Some(english), None) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::parse(
                origin,
                index + 1,
                "expected exactly one TAB between foreign and english text",
            ));
        };
        let foreign = tokenize(foreign, rules);
        let english = tokenize(english, rules);
        if foreign.is_empty() || english.is_empty() {
            bitext.skipped += 1;
            continue;
        }
        bitext.pairs.push(BitextPair {
            pair_id: index as u64,
            foreign,
            english,
        });
    }
    Ok(bitext)
}

pub fn load_bitext(path: impl AsRef<Path>) -> Result<Bitext> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bitext(&text, path)
}

/// Writes pairs back in the wire format, tokens joined by single spaces.
pub fn write_bitext<W: Write>(out: &mut W, pairs: &[BitextPair]) -> std::io::Result<()> {
    for pair in pairs {
        writeln!(out, "{}\t{}", pair.foreign.join(" "), pair.english.join(" "))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Vec<String>>,
}

impl Document {
    /// Every token occurrence, sentence by sentence.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub query_id: String,
    pub terms: Vec<String>,
}

#[derive(Deserialize, Serialize)]
pub struct DocumentRecord {
    pub id: String,
    pub sentences: Vec<String>,
}

/// One JSON object per line. Sentences that normalize to nothing are
/// dropped; a document left with no sentence is an error.
pub fn parse_documents(text: &str, origin: &Path) -> Result<Vec<Document>> {
    let rules = Normalization::default();
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(origin, index + 1, e.to_string()))?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId {
                kind: "document",
                id: record.id,
            });
        }
        let sentences: Vec<Vec<String>> = record
            .sentences
            .iter()
            .map(|s| tokenize(s, rules))
            .filter(|s| !s.is_empty())
            .collect();
        if sentences.is_empty() {
            return Err(Error::EmptyRecord {
                kind: "document",
                id: record.id,
            });
        }
        docs.push(Document {
            doc_id: record.id,
            sentences,
        });
    }
    Ok(docs)
}

/// `query_id<TAB>raw text` lines. Stopwords are removed from the terms.
pub fn parse_queries(text: &str, origin: &Path, stopwords: &Stopwords) -> Result<Vec<Query>> {
    let rules = Normalization::default();
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, raw)) = line.split_once('\t') else {
            return Err(Error::parse(origin, index + 1, "expected query_id<TAB>text"));
        };
        let id = id.trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { kind: "query", id });
        }
        let terms: Vec<String> = tokenize(raw, rules)
            .into_iter()
            .filter(|t| !stopwords.contains(t))
            .collect();
        if terms.is_empty() {
            return Err(Error::EmptyRecord {
                kind: "query",
                id,
            });
        }
        queries.push(Query {
            query_id: id,
            terms,
        });
    }
    Ok(queries)
}

/// One judged `(query_id, doc_id, relevant)` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Judgment {
    pub query_id: String,
    pub doc_id: String,
    pub relevant: bool,
}

/// `query_id<TAB>doc_id<TAB>relevance` lines with relevance 0 or 1.
pub fn parse_judgments(text: &str, origin: &Path) -> Result<Vec<Judgment>> {
    let mut out = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [query_id, doc_id, relevance] = fields[..] else {
            return Err(Error::parse(
                origin,
                index + 1,
                "expected query_id<TAB>doc_id<TAB>relevance",
            ));
        };
        let relevant = match relevance.trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::parse(
                    origin,
                    index + 1,
                    format!("relevance must be 0 or 1, got `{other}`"),
                ))
            }
        };
        out.push(Judgment {
            query_id: query_id.trim().to_string(),
            doc_id: doc_id.trim().to_string(),
            relevant,
        });
    }
    Ok(out)
}

pub fn parse_qrels(text: &str, origin: &Path) -> Result<Qrels> {
    Ok(Qrels::from_judgments(&parse_judgments(text, origin)?))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_documents(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    parse_documents(&read(path)?, path)
}

pub fn load_queries(path: impl AsRef<Path>, stopwords: &Stopwords) -> Result<Vec<Query>> {
    let path = path.as_ref();
    parse_queries(&read(path)?, path, stopwords)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    parse_qrels(&read(path)?, path)
}

/// Checks that every query and document named in `qrels` was loaded.
pub fn check_references(documents: &[Document], queries: &[Query], qrels: &Qrels) -> Result<()> {
    let doc_ids: HashSet<&str> = documents.iter().map(|d| d.doc_id.as_str()).collect();
    let query_ids: HashSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
    for (query_id, relevant) in qrels.iter() {
        if !query_ids.contains(query_id) {
            return Err(Error::DanglingId {
                kind: "query",
                id: query_id.to_string(),
            });
        }
        if let Some(doc) = relevant.iter().find(|d| !doc_ids.contains(d.as_str())) {
            return Err(Error::DanglingId {
                kind: "document",
                id: doc.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RetrievalInputs {
    pub documents: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
}

pub fn load_retrieval_inputs(
    doc_path: impl AsRef<Path>,
    query_path: impl AsRef<Path>,
    qrels_path: impl AsRef<Path>,
    stopwords: &Stopwords,
) -> Result<RetrievalInputs> {
    let documents = load_documents(doc_path)?;
    let queries = load_queries(query_path, stopwords)?;
    let qrels_path = qrels_path.as_ref();
    let judgments = parse_judgments(&read(qrels_path)?, qrels_path)?;

    // Zero-relevance lines name ids too, so every judgment is checked.
    let doc_ids: HashSet<&str> = documents.iter().map(|d| d.doc_id.as_str()).collect();
    let query_ids: HashSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
    for j in &judgments {
        if !query_ids.contains(j.query_id.as_str()) {
            return Err(Error::DanglingId {
                kind: "query",
                id: j.query_id.clone(),
            });
        }
        if !doc_ids.contains(j.doc_id.as_str()) {
            return Err(Error::DanglingId {
                kind: "document",
                id: j.doc_id.clone(),
            });
        }
    }
    Ok(RetrievalInputs {
        qrels: Qrels::from_judgments(&judgments),
        documents,
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn tokenizes_table_one_sentence() {
        let got = tokenize(
            "doctors allege that the system currently in operation is effective",
            Normalization::default(),
        );
        assert_eq!(
            got,
            toks("doctors allege that the system currently in operation is effective")
        );
        assert!(tokenize("", Normalization::default()).is_empty());
        assert_eq!(
            tokenize("Medikų, teigimu!", Normalization::default()),
            toks("medikų teigimu")
        );
    }

    #[test]
    fn punctuation_only_tokens_vanish() {
        assert_eq!(
            tokenize(" -- «Labas» ... (pasauli) ", Normalization::default()),
            toks("labas pasauli")
        );
        // Interior punctuation is kept.
        assert_eq!(tokenize("don't", Normalization::default()), toks("don't"));
    }

    #[test]
    fn bitext_pairs_and_errors() {
        let p = Path::new("b.tsv");
        let b = parse_bitext(
            "medikų teigimu dabar veikianti sistema efektyvi\tdoctors allege that the system currently in operation is effective\n",
            p,
        )
        .unwrap();
        assert_eq!(b.pairs.len(), 1);
        assert_eq!(b.pairs[0].pair_id, 0);
        assert_eq!(b.skipped, 0);

        let empty = parse_bitext("", p).unwrap();
        assert!(empty.pairs.is_empty());
        assert_eq!(empty.skipped, 0);

        match parse_bitext("a\tb\tc\n", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_bitext("a\tb\nno tab here\n", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        let skipped = parse_bitext("...\tword\nx\ty\n", p).unwrap();
        assert_eq!(skipped.skipped, 1);
        assert_eq!(skipped.pairs[0].pair_id, 1);
    }

    #[test]
    fn vocabulary_ids_follow_frequency_then_lexicographic_order() {
        let sides = [toks("a b"), toks("a")];
        let v = build_vocabulary(sides.iter().map(Vec::as_slice), &Stopwords::empty(), 1).unwrap();
        assert_eq!(v.id("a"), Some(0));
        assert_eq!(v.id("b"), Some(1));
        assert_eq!(v.get("a").unwrap().frequency, 2);

        let err = build_vocabulary(sides.iter().map(Vec::as_slice), &Stopwords::empty(), 3);
        assert!(matches!(err, Err(Error::EmptyVocabulary { min_freq: 3 })));

        let ties = [toks("c b a")];
        let v = build_vocabulary(ties.iter().map(Vec::as_slice), &Stopwords::empty(), 1).unwrap();
        let order: Vec<_> = v.entries().iter().map(|e| e.token.as_str()).collect();
        assert_eq!(order, ["a", "b", "c"]);
    }

    #[test]
    fn stopwords_are_flagged() {
        let side = [tokenize(
            "doctors allege that the system currently in operation is effective",
            Normalization::default(),
        )];
        let stop: Stopwords = ["the".to_string()].into_iter().collect();
        let v = build_vocabulary(side.iter().map(Vec::as_slice), &stop, 1).unwrap();
        assert!(v.is_stopword("the"));
        assert!(!v.is_stopword("doctors"));
        assert!(Stopwords::builtin().contains("that"));
        assert!(Stopwords::builtin().len() >= 140);
    }

    #[test]
    fn query_that_is_all_stopwords_is_rejected() {
        let err = parse_queries("q1\tthe of and\n", Path::new("q.tsv"), &Stopwords::builtin());
        assert!(matches!(err, Err(Error::EmptyRecord { kind: "query", ref id }) if id == "q1"));
        let ok = parse_queries("q1\tThe Doctors\n", Path::new("q.tsv"), &Stopwords::builtin())
            .unwrap();
        assert_eq!(ok[0].terms, toks("doctors"));
    }

    #[test]
    fn documents_parse_and_reject_empties() {
        let p = Path::new("d.jsonl");
        let docs = parse_documents(
            r#"{"id": "d1", "sentences": ["Labas rytas.", "!!", "ačiū"]}"#,
            p,
        )
        .unwrap();
        assert_eq!(docs[0].sentences, vec![toks("labas rytas"), toks("ačiū")]);
        assert!(matches!(
            parse_documents(r#"{"id": "d1", "sentences": ["..."]}"#, p),
            Err(Error::EmptyRecord { .. })
        ));
        assert!(matches!(
            parse_documents("{\"id\":\"a\",\"sentences\":[\"x\"]}\n{\"id\":\"a\",\"sentences\":[\"y\"]}", p),
            Err(Error::DuplicateId { .. })
        ));
    }

    #[test]
    fn qrels_relevance_must_be_binary() {
        let p = Path::new("q.tsv");
        let q = parse_qrels("q1\td1\t1\nq1\td2\t0\nq2\td1\t0\n", p).unwrap();
        assert!(q.is_relevant("q1", "d1"));
        assert!(!q.is_relevant("q1", "d2"));
        assert_eq!(q.relevant("q2").map(|s| s.len()), Some(0));
        assert!(matches!(parse_qrels("q1\td1\t2\n", p), Err(Error::Parse { line: 1, .. })));
    }
}
