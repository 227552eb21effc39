//! Non-neural document scorers built on a translation table.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::{Document, Query};
use crate::lexicon::TranslationTable;

pub const DEFAULT_ALPHA: f64 = 0.3;

/// Add-one smoothed English unigram model `p(q|GE)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundModel {
    counts: HashMap<String, u64>,
    total: u64,
}

impl BackgroundModel {
    pub fn from_sides<'a, I>(sides: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut total = 0;
        for side in sides {
            for t in side {
                *counts.entry(t.clone()).or_default() += 1;
                total += 1;
            }
        }
        BackgroundModel { counts, total }
    }

    pub fn vocabulary_size(&self) -> usize {
        self.counts.len()
    }

    /// Out-of-vocabulary terms get the add-one floor `1 / (N + V)`.
    pub fn probability(&self, term: &str) -> f64 {
        let c = self.counts.get(term).copied().unwrap_or(0);
        (c + 1) as f64 / (self.total + self.counts.len() as u64) as f64
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }
}

/// Probability that every query term is produced by at least one foreign
/// token occurrence: `prod_q [1 - prod_f (1 - p(q|f))]`.
pub fn occurrence_score(query: &Query, doc: &Document, table: &TranslationTable) -> f64 {
    let mut score = 1.0;
    for q in &query.terms {
        let mut untranslated = 1.0;
        for f in doc.tokens() {
            untranslated *= 1.0 - table.lookup(f, q);
        }
        score *= 1.0 - untranslated;
    }
    score
}

/// Mixture of background and translated-document language models,
/// `sum_q ln[alpha p(q|GE) + (1 - alpha) sum_f p(q|f) p(f|Doc)]`.
/// Returns negative infinity when some term has no support at all.
pub fn generative_score(
    query: &Query,
    doc: &Document,
    table: &TranslationTable,
    background: &BackgroundModel,
    alpha: f64,
) -> f64 {
    let mut type_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for f in doc.tokens() {
        *type_counts.entry(f).or_default() += 1;
    }
    let length = doc.token_count() as f64;
    let mut score = 0.0;
    for q in &query.terms {
        let mut translated = 0.0;
        for (f, &count) in &type_counts {
            translated += table.lookup(f, q) * (count as f64 / length);
        }
        score += (alpha * background.probability(q) + (1.0 - alpha) * translated).ln();
    }
    score
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

    fn doc(sentences: &[&[&str]]) -> Document {
        Document {
            doc_id: "d".into(),
            sentences: sentences
                .iter()
                .map(|s| s.iter().map(|t| t.to_string()).collect())
                .collect(),
        }
    }

    #[test]
    fn occurrence_hand_cases() {
        let t = TranslationTable::from_entries([("f", "q", 0.5), ("g", "q", 0.5)]);
        assert_eq!(occurrence_score(&query(&["q"]), &doc(&[&["f"]]), &t), 0.5);
        assert_eq!(occurrence_score(&query(&["q"]), &doc(&[&["f", "g"]]), &t), 0.75);
        assert_eq!(occurrence_score(&query(&["q"]), &doc(&[&["h"]]), &t), 0.0);
        // A term with no evidence zeroes the product.
        assert_eq!(occurrence_score(&query(&["q", "r"]), &doc(&[&["f"]]), &t), 0.0);
        // Occurrences, not types.
        assert_eq!(occurrence_score(&query(&["q"]), &doc(&[&["f"], &["f"]]), &t), 0.75);
    }

    #[test]
    fn background_is_normalized() {
        let sides = [vec!["a".to_string(), "b".into(), "a".into()], vec!["c".to_string()]];
        let bg = BackgroundModel::from_sides(sides.iter().map(Vec::as_slice));
        let total: f64 = bg.terms().map(|t| bg.probability(t)).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(bg.probability("a"), 3.0 / 7.0);
        assert_eq!(bg.probability("zzz"), 1.0 / 7.0);
        assert_eq!(bg.vocabulary_size(), 3);
    }

    #[test]
    fn generative_hand_cases() {
        let t = TranslationTable::from_entries([("f", "q", 1.0)]);
        let sides = [vec!["q".to_string(), "r".into()]];
        let bg = BackgroundModel::from_sides(sides.iter().map(Vec::as_slice));
        let q = query(&["q", "r"]);

        let only_bg = generative_score(&q, &doc(&[&["f"]]), &t, &bg, 1.0);
        assert_eq!(only_bg, bg.probability("q").ln() + bg.probability("r").ln());
        assert_eq!(only_bg, generative_score(&q, &doc(&[&["g", "h"]]), &t, &bg, 1.0));

        assert_eq!(generative_score(&query(&["q"]), &doc(&[&["f"]]), &t, &bg, 0.0), 0.0);
        assert_eq!(
            generative_score(&query(&["r"]), &doc(&[&["f"]]), &t, &bg, 0.0),
            f64::NEG_INFINITY
        );
        assert!(generative_score(&query(&["r"]), &doc(&[&["f"]]), &t, &bg, DEFAULT_ALPHA).is_finite());
    }

    #[test]
    fn duplicating_sentences_keeps_generative_score() {
        let t = TranslationTable::from_entries([("f", "q", 0.3), ("g", "q", 0.6), ("g", "r", 0.1)]);
        let sides = [vec!["q".to_string(), "r".into(), "s".into()]];
        let bg = BackgroundModel::from_sides(sides.iter().map(Vec::as_slice));
        let q = query(&["q", "r"]);
        let once = doc(&[&["f", "g", "h"], &["g"]]);
        let twice = doc(&[&["f", "g", "h"], &["g"], &["f", "g", "h"], &["g"]]);
        let a = generative_score(&q, &once, &t, &bg, 0.3);
        let b = generative_score(&q, &twice, &t, &bg, 0.3);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
