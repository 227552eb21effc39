use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use proptest::prelude::*;

use clir_core::corpus::{
    build_vocabulary, parse_bitext, tokenize, write_bitext, BitextPair, Document, Normalization, Query, Stopwords,
};
use clir_core::lexicon::{train_model1, Model1Options, TranslationTable};
use clir_core::metrics::{aqwv, average_precision, classification_report, mean_average_precision, mqwv, Qrels};
use clir_core::neural::model::forward_cross_encoder_padded;
use clir_core::neural::{
    forward, forward_cross_encoder, pack_input, Checkpoint, ModelConfig, ModelKind, NUM_SPECIAL,
};
use clir_core::probrank::{generative_score, occurrence_score, BackgroundModel};
use clir_core::ranker::{noisy_or_doc_score, QueryRanking, Run, ScoredDoc};
use clir_core::weaksup::build_samples;

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["ka", "mo", "ri", "tu", "ne", "sa", "lo", "vi", "the", "of"]).prop_map(String::from)
}

fn sentence(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(word(), 1..=max)
}

fn pairs(max_pairs: usize) -> impl Strategy<Value = Vec<BitextPair>> {
    prop::collection::vec((sentence(6), sentence(6)), 1..=max_pairs).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (f, e))| BitextPair {
                pair_id: i as u64,
                foreign: f.into_iter().map(|w| format!("x{w}")).collect(),
                english: e,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn tokenize_is_idempotent(raw in "[ a-zA-Z.,!?'\\-\u{e9}\u{c9}\t]{0,40}") {
        let rules = Normalization::default();
        let once = tokenize(&raw, rules);
        prop_assert_eq!(tokenize(&once.join(" "), rules), once);
    }

    #[test]
    fn bitext_round_trips(p in pairs(8)) {
        let mut buf = Vec::new();
        write_bitext(&mut buf, &p).unwrap();
        let back = parse_bitext(std::str::from_utf8(&buf).unwrap(), Path::new("b")).unwrap();
        prop_assert_eq!(back.pairs, p);
    }

    #[test]
    fn vocabulary_is_deterministic(p in pairs(8)) {
        let sw = Stopwords::builtin();
        let a = build_vocabulary(p.iter().map(|x| x.english.as_slice()), &sw, 1);
        let b = build_vocabulary(p.iter().map(|x| x.english.as_slice()), &sw, 1);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.entries(), b.entries()),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn weak_labels_and_ratio(p in pairs(10), neg in 1usize..3, seed in any::<u64>()) {
        let sw = Stopwords::builtin();
        let vocab = build_vocabulary(p.iter().map(|x| x.english.as_slice()), &sw, 1).unwrap();
        let run = |s| build_samples(&p, &vocab, neg, s).collect::<Result<Vec<_>, _>>();
        let (first, second) = (run(seed), run(seed));
        match first {
            Err(_) => prop_assert!(second.is_err()),
            Ok(samples) => {
                prop_assert_eq!(&samples, &second.unwrap());
                let pos = samples.iter().filter(|s| s.label).count();
                prop_assert_eq!(samples.len() - pos, neg * pos);
                for s in &samples {
                    let pair = &p[s.pair_id as usize];
                    prop_assert!(!sw.contains(&s.query));
                    prop_assert_eq!(pair.english.contains(&s.query), s.label);
                    prop_assert_eq!(&s.sentence, &pair.foreign);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn em_is_monotone_and_normalized(p in pairs(12), use_null in any::<bool>()) {
        let options = Model1Options { iterations: 8, tol: 0.0, use_null };
        let (table, history) = train_model1(&p, options).unwrap();
        for w in history.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", history);
        }
        for f in table.foreign_tokens() {
            let sum: f64 = table.row(f).unwrap().values().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "{f}: {sum}");
        }
        let (again, _) = train_model1(&p, options).unwrap();
        prop_assert_eq!(table.to_tsv(), again.to_tsv());
    }
}

fn probabilities() -> impl Strategy<Value = Vec<(String, String, f64)>> {
    prop::collection::vec(
        (prop::sample::select(vec!["f1", "f2", "f3"]), prop::sample::select(vec!["a", "b", "c"]), 0.0..=1.0f64),
        0..9,
    )
    .prop_map(|v| {
        // One probability per (f, e); later duplicates win.
        let m: BTreeMap<(String, String), f64> =
            v.into_iter().map(|(f, e, p)| ((f.to_string(), e.to_string()), p)).collect();
        m.into_iter().map(|((f, e), p)| (f, e, p)).collect()
    })
}

fn doc(sentences: Vec<Vec<String>>) -> Document {
    Document { doc_id: "d".into(), sentences }
}

fn query(terms: &[&str]) -> Query {
    Query { query_id: "q".into(), terms: terms.iter().map(|t| t.to_string()).collect() }
}

fn foreign_sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["f1", "f2", "f3", "f4"]).prop_map(String::from), 1..5)
}

proptest! {
    #[test]
    fn occurrence_monotonicity(
        entries in probabilities(),
        s in prop::collection::vec(foreign_sentence(), 1..4),
        extra in foreign_sentence(),
        bump in 0.0..=1.0f64,
        pick in any::<prop::sample::Index>(),
    ) {
        let table = TranslationTable::from_entries(entries.iter().map(|(f, e, p)| (f.as_str(), e.as_str(), *p)));
        let d = doc(s.clone());
        let base = occurrence_score(&query(&["a"]), &d, &table);

        let mut longer = s.clone();
        longer.push(extra);
        prop_assert!(occurrence_score(&query(&["a"]), &doc(longer), &table) >= base);
        prop_assert!(occurrence_score(&query(&["a", "b"]), &d, &table) <= base);

        if !entries.is_empty() {
            let mut raised = entries.clone();
            let i = pick.index(raised.len());
            raised[i].2 = raised[i].2.max(bump);
            let t2 = TranslationTable::from_entries(raised.iter().map(|(f, e, p)| (f.as_str(), e.as_str(), *p)));
            for q in [["a"], ["b"], ["c"]] {
                prop_assert!(occurrence_score(&query(&q), &d, &t2) >= occurrence_score(&query(&q), &d, &table));
            }
        }
    }

    #[test]
    fn generative_score_ignores_duplicated_sentences(
        entries in probabilities(),
        s in prop::collection::vec(foreign_sentence(), 1..4),
        alpha in 0.0..=1.0f64,
    ) {
        let table = TranslationTable::from_entries(entries.iter().map(|(f, e, p)| (f.as_str(), e.as_str(), *p)));
        let english = [vec!["a".to_string(), "b".to_string()], vec!["c".to_string()]];
        let bg = BackgroundModel::from_sides(english.iter().map(Vec::as_slice));
        let doubled: Vec<Vec<String>> = s.iter().chain(s.iter()).cloned().collect();
        let q = query(&["a", "c"]);
        let a = generative_score(&q, &doc(s), &table, &bg, alpha);
        let b = generative_score(&q, &doc(doubled), &table, &bg, alpha);
        prop_assert!(a == b || (a - b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");
    }
}

/// `p(q|s)` from a fixed lookup keyed by the sentence's first token.
fn lookup_scorer(p: &[Vec<f64>]) -> impl Fn(&str, &[String]) -> clir_core::Result<f64> + '_ {
    move |term: &str, s: &[String]| {
        let si: usize = s[0].parse().unwrap();
        let qi: usize = term.parse().unwrap();
        Ok(p[si][qi])
    }
}

fn bernoulli_enumeration(p: &[Vec<f64>], terms: usize) -> f64 {
    // Each sentence fires with probability prod_q p(q|s); sum over outcomes.
    let fire: Vec<f64> = p.iter().map(|row| row[..terms].iter().product()).collect();
    let mut any = 0.0;
    for mask in 0u32..(1 << fire.len()) {
        let mut prob = 1.0;
        for (i, f) in fire.iter().enumerate() {
            prob *= if mask & (1 << i) != 0 { *f } else { 1.0 - f };
        }
        if mask != 0 {
            any += prob;
        }
    }
    any
}

proptest! {
    #[test]
    fn noisy_or_properties(
        p in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 3), 1..=9),
        extra in prop::collection::vec(0.0..=1.0f64, 3),
        terms in 1usize..3,
    ) {
        let scorer = lookup_scorer(&p);
        let sentences: Vec<Vec<String>> = (0..p.len()).map(|i| vec![i.to_string()]).collect();
        let q: Vec<String> = (0..terms).map(|i| i.to_string()).collect();
        let qref: Vec<&str> = q.iter().map(String::as_str).collect();
        let score = noisy_or_doc_score(&scorer, &query(&qref), &doc(sentences.clone())).unwrap();
        prop_assert!((0.0..=1.0).contains(&score));
        prop_assert!((score - bernoulli_enumeration(&p, terms)).abs() <= 1e-12);

        let mut longer_p = p.clone();
        longer_p.push(extra);
        let longer_scorer = lookup_scorer(&longer_p);
        let mut longer = sentences.clone();
        longer.push(vec![p.len().to_string()]);
        prop_assert!(noisy_or_doc_score(&longer_scorer, &query(&qref), &doc(longer)).unwrap() >= score);

        let more: Vec<&str> = ["0", "1", "2"][..terms + 1].to_vec();
        prop_assert!(noisy_or_doc_score(&scorer, &query(&more), &doc(sentences.clone())).unwrap() <= score);

        let single = noisy_or_doc_score(&scorer, &query(&["0"]), &doc(sentences)).unwrap();
        let max = p.iter().map(|r| r[0]).fold(0.0, f64::max);
        // 1 - (1 - p) can round one ulp below p.
        prop_assert!(single >= max - 4.0 * f64::EPSILON, "{single} < {max}");
    }
}

fn run_of(scores: &[Vec<Option<f64>>]) -> Run {
    Run::new(
        scores
            .iter()
            .enumerate()
            .map(|(q, row)| QueryRanking {
                query_id: format!("q{q}"),
                docs: row
                    .iter()
                    .enumerate()
                    .filter_map(|(d, s)| s.map(|score| ScoredDoc { doc_id: format!("d{d}"), score }))
                    .collect(),
            })
            .collect(),
    )
}

fn qrels_of(rel: &[Vec<bool>]) -> Qrels {
    Qrels::from_map(
        rel.iter()
            .enumerate()
            .map(|(q, row)| {
                let set: BTreeSet<String> =
                    row.iter().enumerate().filter(|(_, &r)| r).map(|(d, _)| format!("d{d}")).collect();
                (format!("q{q}"), set)
            })
            .collect(),
    )
}

/// Scores drawn from a small grid so that ties are common.
fn instance() -> impl Strategy<Value = (Vec<Vec<Option<f64>>>, Vec<Vec<bool>>)> {
    (1usize..=5, 1usize..=8).prop_flat_map(|(nq, nd)| {
        let score = prop::option::weighted(0.85, prop::sample::select(vec![0.0, 0.25, 0.5, 0.75, 1.0]));
        (
            prop::collection::vec(prop::collection::vec(score, nd), nq),
            prop::collection::vec(prop::collection::vec(any::<bool>(), nd), nq),
        )
    })
}

proptest! {
    #[test]
    fn metric_ranges(
        (scores, rel) in instance(),
        t in prop::sample::select(vec![-1.0, 0.0, 0.25, 0.3, 0.5, 1.0, 2.0]),
    ) {
        let (run, qrels) = (run_of(&scores), qrels_of(&rel));
        prop_assume!(scores.iter().flatten().any(Option::is_some) || rel.iter().flatten().any(|&r| r));
        let beta = 40.0;
        let best = mqwv(&run, &qrels, beta).unwrap();
        prop_assert!((0.0..=1.0).contains(&best.value));
        let at = aqwv(&run, &qrels, t, beta).unwrap();
        prop_assert!(at.value >= -beta && at.value <= 1.0);
        prop_assert!(best.value >= at.value);
        prop_assert_eq!(best.value.to_bits(), mqwv(&run, &qrels, beta).unwrap().value.to_bits());
        if rel.iter().any(|r| r.iter().any(|&x| x)) {
            let m = mean_average_precision(&run, &qrels).unwrap();
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn ap_is_one_iff_relevant_first(order in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(), rel in prop::collection::vec(any::<bool>(), 8)) {
        let ranked: Vec<String> = order.iter().map(|d| format!("d{d}")).collect();
        let relevant: BTreeSet<String> = (0..8).filter(|&d| rel[d]).map(|d| format!("d{d}")).collect();
        match average_precision(&ranked, &relevant) {
            None => prop_assert!(relevant.is_empty()),
            Some(ap) => {
                prop_assert!((0.0..=1.0).contains(&ap));
                let k = relevant.len();
                let front = ranked[..k].iter().all(|d| relevant.contains(d));
                prop_assert_eq!(ap == 1.0, front);
            }
        }
    }

    #[test]
    fn accuracy_is_the_weighted_diagonal(
        v in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..50),
        t in 0.0..=1.0f64,
    ) {
        let (pred, labels): (Vec<f64>, Vec<bool>) = v.into_iter().unzip();
        let r = classification_report(&pred, &labels, t).unwrap();
        let c = r.confusion.counts;
        let n = pred.len() as f64;
        let weighted = (c[0][0] + c[0][1]) as f64 / n * r.confusion.rows[0][0]
            + (c[1][0] + c[1][1]) as f64 / n * r.confusion.rows[1][1];
        prop_assert!((r.accuracy - weighted).abs() <= 1e-12);
    }
}

fn small_config(kind: ModelKind, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::toy(kind, 4, 5, seed);
    c.embed_dim = 8;
    c.ffn_dim = 8;
    c.num_layers = 1;
    c.max_seq_len = 10;
    c
}

fn foreign_ids() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(NUM_SPECIAL + 4..NUM_SPECIAL + 9, 1..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outputs_are_probabilities(kind in prop::sample::select(ModelKind::ALL.to_vec()), seed in 0u64..1000, q in NUM_SPECIAL..NUM_SPECIAL + 4, s in foreign_ids()) {
        let ckpt = Checkpoint::init(small_config(kind, seed)).unwrap();
        let p = forward(&ckpt, q, &s).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn padding_never_changes_the_output(seed in 0u64..1000, q in NUM_SPECIAL..NUM_SPECIAL + 4, s in foreign_ids()) {
        let ckpt = Checkpoint::init(small_config(ModelKind::CrossEncoder, seed)).unwrap();
        let packed = pack_input(q, &s, ckpt.config.max_seq_len).unwrap();
        let prefix = forward_cross_encoder(&ckpt, &packed).unwrap();
        let padded = forward_cross_encoder_padded(&ckpt, &packed).unwrap();
        prop_assert_eq!(prefix.to_bits(), padded.to_bits());

    }

    #[test]
    fn checkpoints_round_trip(kind in prop::sample::select(ModelKind::ALL.to_vec()), seed in any::<u64>()) {
        let ckpt = Checkpoint::init(small_config(kind, seed)).unwrap();
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        prop_assert!(back.bitwise_eq(&ckpt));
        prop_assert_eq!(back.to_bytes(), ckpt.to_bytes());
    }
}

#[test]
fn em_is_deterministic_on_distinct_vocabularies() {
    let p: Vec<BitextPair> = (0..20)
        .map(|i| BitextPair {
            pair_id: i,
            foreign: vec![format!("f{}", i % 7), format!("f{}", i % 5)],
            english: vec![format!("e{}", i % 7), format!("e{}", i % 5)],
        })
        .collect();
    let a = train_model1(&p, Model1Options::default()).unwrap();
    let b = train_model1(&p, Model1Options::default()).unwrap();
    assert_eq!(a.0.to_tsv(), b.0.to_tsv());
    assert_eq!(a.1, b.1);
    let distinct: HashSet<_> = a.0.foreign_tokens().collect();
    assert_eq!(distinct.len(), 7);
}
