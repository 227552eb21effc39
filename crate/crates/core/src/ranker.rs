//! Document scoring, Noisy-OR aggregation, and ranked runs.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::{Document, Query};
use crate::error::{Error, Result};
use crate::format_sig17;

/// Scores a single query term against one foreign sentence, `p(q|s)`.
pub trait SentenceScorer {
    fn score_sentence(&self, term: &str, sentence: &[String]) -> Result<f64>;
}

impl<F> SentenceScorer for F
where
    F: Fn(&str, &[String]) -> Result<f64>,
{
    fn score_sentence(&self, term: &str, sentence: &[String]) -> Result<f64> {
        self(term, sentence)
    }
}

/// Scores a whole document for a query.
pub trait DocScorer {
    fn score_document(&self, query: &Query, doc: &Document) -> Result<f64>;
}

impl<F> DocScorer for F
where
    F: Fn(&Query, &Document) -> Result<f64>,
{
    fn score_document(&self, query: &Query, doc: &Document) -> Result<f64> {
        self(query, doc)
    }
}

/// `1 - prod_s (1 - prod_q p(q|s))`: the document is relevant if at least
/// one sentence contains every query term, terms independent.
pub fn noisy_or_doc_score<S: SentenceScorer + ?Sized>(
    scorer: &S,
    query: &Query,
    doc: &Document,
) -> Result<f64> {
    let mut none_fire = 1.0;
    for sentence in &doc.sentences {
        let mut all_terms = 1.0;
        for term in &query.terms {
            let p = scorer.score_sentence(term, sentence)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ContractViolation {
                    query_id: query.query_id.clone(),
                    value: p,
                });
            }
            all_terms *= p;
        }
        none_fire *= 1.0 - all_terms;
    }
    Ok(1.0 - none_fire)
}

/// Binds a sentence scorer into a document scorer via Noisy-OR.
pub struct NoisyOr<S>(pub S);

impl<S: SentenceScorer> DocScorer for NoisyOr<S> {
    fn score_document(&self, query: &Query, doc: &Document) -> Result<f64> {
        noisy_or_doc_score(&self.0, query, doc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRanking {
    pub query_id: String,
    pub docs: Vec<ScoredDoc>,
}

/// Per-query rankings, each sorted by descending score then ascending doc id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Run {
    rankings: Vec<QueryRanking>,
}

fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

impl Run {
    /// Sorts every ranking into run order. Query order is kept.
    pub fn new(mut rankings: Vec<QueryRanking>) -> Self {
        for r in &mut rankings {
            r.docs.sort_by(rank_order);
        }
        Run { rankings }
    }

    pub fn rankings(&self) -> &[QueryRanking] {
        &self.rankings
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.rankings.iter().map(|r| r.query_id.as_str())
    }

    pub fn ranking(&self, query_id: &str) -> Option<&[ScoredDoc]> {
        self.rankings
            .iter()
            .find(|r| r.query_id == query_id)
            .map(|r| r.docs.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.rankings.is_empty()
    }

    /// `query_id<TAB>doc_id<TAB>rank<TAB>score`, rank from 1.
    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for r in &self.rankings {
            for (rank, d) in r.docs.iter().enumerate() {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    r.query_id,
                    d.doc_id,
                    rank + 1,
                    format_sig17(d.score)
                )?;
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("run is UTF-8")
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut rankings: Vec<QueryRanking> = Vec::new();
        for (index, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [query_id, doc_id, _rank, score] = fields[..] else {
                return Err(Error::parse(
                    origin,
                    index + 1,
                    "expected query_id<TAB>doc_id<TAB>rank<TAB>score",
                ));
            };
            let score: f64 = parse_score(score)
                .ok_or_else(|| Error::parse(origin, index + 1, format!("bad score `{score}`")))?;
            let doc = ScoredDoc {
                doc_id: doc_id.to_string(),
                score,
            };
            match rankings.last_mut() {
                Some(r) if r.query_id == query_id => r.docs.push(doc),
                _ => {
                    if rankings.iter().any(|r| r.query_id == query_id) {
                        return Err(Error::parse(
                            origin,
                            index + 1,
                            format!("lines for query `{query_id}` are not contiguous"),
                        ));
                    }
                    rankings.push(QueryRanking {
                        query_id: query_id.to_string(),
                        docs: vec![doc],
                    });
                }
            }
        }
        for r in &rankings {
            let mut ids: Vec<&str> = r.docs.iter().map(|d| d.doc_id.as_str()).collect();
            ids.sort_unstable();
            if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::DuplicateId {
                    kind: "run document",
                    id: format!("{}/{}", r.query_id, w[0]),
                });
            }
        }
        Ok(Run::new(rankings))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Run::parse(&text, path)
    }
}

fn parse_score(s: &str) -> Option<f64> {
    match s.trim() {
        "-inf" => Some(f64::NEG_INFINITY),
        "inf" => Some(f64::INFINITY),
        other => other.parse().ok().filter(|v: &f64| !v.is_nan()),
    }
}

/// Scores every (query, document) pair and sorts each query's list.
pub fn produce_run<S: DocScorer + ?Sized>(
    scorer: &S,
    queries: &[Query],
    documents: &[Document],
) -> Result<Run> {
    let mut rankings = Vec::with_capacity(queries.len());
    for query in queries {
        let mut docs = Vec::with_capacity(documents.len());
        for doc in documents {
            let annotate = |source: Error| Error::Scoring {
                query_id: query.query_id.clone(),
                doc_id: doc.doc_id.clone(),
                source: Box::new(source),
            };
            let score = scorer.score_document(query, doc).map_err(annotate)?;
            if score.is_nan() {
                return Err(annotate(Error::InvalidArgument("score is NaN".into())));
            }
            docs.push(ScoredDoc {
                doc_id: doc.doc_id.clone(),
                score,
            });
        }
        rankings.push(QueryRanking {
            query_id: query.query_id.clone(),
            docs,
        });
    }
    Ok(Run::new(rankings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query(terms: &[&str]) -> Query {
        Query {
            query_id: "q".into(),
            terms: terms.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn doc(id: &str, sentences: &[&[&str]]) -> Document {
        Document {
            doc_id: id.into(),
            sentences: sentences
                .iter()
                .map(|s| s.iter().map(|t| t.to_string()).collect())
                .collect(),
        }
    }

    /// Looks the probability up from the sentence's first token.
    fn table_scorer(term: &str, sentence: &[String]) -> Result<f64> {
        let _ = term;
        Ok(sentence[0].parse().unwrap())
    }

    #[test]
    fn noisy_or_hand_cases() {
        let q = query(&["x"]);
        let one = doc("d", &[&["0.8"]]);
        assert!((noisy_or_doc_score(&table_scorer, &q, &one).unwrap() - 0.8).abs() < 1e-15);

        let two = doc("d", &[&["0.5"], &["0.5"]]);
        assert_eq!(noisy_or_doc_score(&table_scorer, &q, &two).unwrap(), 0.75);

        let q2 = query(&["x", "y"]);
        let single = doc("d", &[&["0.5"]]);
        assert_eq!(noisy_or_doc_score(&table_scorer, &q2, &single).unwrap(), 0.25);

        let certain = doc("d", &[&["0.1"], &["1"], &["0.3"]]);
        assert_eq!(noisy_or_doc_score(&table_scorer, &q, &certain).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_scores_are_rejected() {
        let bad = doc("d", &[&["1.5"]]);
        assert!(matches!(
            noisy_or_doc_score(&table_scorer, &query(&["x"]), &bad),
            Err(Error::ContractViolation { .. })
        ));
    }

    #[test]
    fn runs_sort_by_score_then_doc_id() {
        let docs = [doc("d2", &[&["0.1"]]), doc("d1", &[&["0.9"]])];
        let run = produce_run(&NoisyOr(table_scorer), &[query(&["x"])], &docs).unwrap();
        let ids: Vec<_> = run.rankings()[0].docs.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["d1", "d2"]);

        let tied = [doc("d2", &[&["0.5"]]), doc("d1", &[&["0.5"]])];
        let run = produce_run(&NoisyOr(table_scorer), &[query(&["x"])], &tied).unwrap();
        let ids: Vec<_> = run.rankings()[0].docs.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["d1", "d2"]);

        let empty = produce_run(&NoisyOr(table_scorer), &[], &docs).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn negative_infinity_sorts_last() {
        let scorer = |_: &Query, d: &Document| -> Result<f64> {
            Ok(if d.doc_id == "a" { f64::NEG_INFINITY } else { -1e300 })
        };
        let run = produce_run(&scorer, &[query(&["x"])], &[doc("a", &[&["1"]]), doc("b", &[&["1"]])])
            .unwrap();
        assert_eq!(run.rankings()[0].docs[1].doc_id, "a");
        let reloaded = Run::parse(&run.to_tsv(), Path::new("r")).unwrap();
        assert_eq!(reloaded, run);
    }

    #[test]
    fn scorer_errors_carry_ids() {
        let bad = doc("d7", &[&["2"]]);
        let err = produce_run(&NoisyOr(table_scorer), &[query(&["x"])], &[bad]).unwrap_err();
        assert!(matches!(err, Error::Scoring { ref doc_id, .. } if doc_id == "d7"));
    }

    #[test]
    fn run_file_round_trip_is_exact() {
        let scorer = |_: &Query, d: &Document| -> Result<f64> { Ok(1.0 / (d.doc_id.len() as f64 + 2.0)) };
        let docs = [doc("a", &[&["1"]]), doc("bbb", &[&["1"]])];
        let run = produce_run(&scorer, &[query(&["x"])], &docs).unwrap();
        let text = run.to_tsv();
        assert!(text.starts_with("q\ta\t1\t"));
        assert_eq!(Run::parse(&text, Path::new("r")).unwrap(), run);
    }
}
