//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export takes plain numbers or a JSON string and returns a JSON
//! string, so the same functions are callable (and tested) natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use clir_core::corpus::{Document, Query};
use clir_core::lexicon::{train_model1, Model1Options};
use clir_core::metrics::{aqwv, mean_average_precision, mqwv};
use clir_core::probrank::occurrence_score;
use clir_core::ranker::{noisy_or_doc_score, produce_run};
use clir_core::synth::{SynthConfig, SynthCorpus};

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

fn error_json(message: impl std::fmt::Display) -> String {
    to_json(&serde_json::json!({ "error": message.to_string() }))
}

/// A corpus small enough to train and rank at interactive speed.
fn demo_corpus(vocab: usize, seed: u64) -> clir_core::Result<SynthCorpus> {
    let vocab = vocab.clamp(8, 60);
    SynthCorpus::generate(&SynthConfig {
        vocab_size: vocab,
        stopwords: 3,
        bitext_pairs: vocab * 6,
        documents: 30,
        sentences_per_doc: 3,
        queries: 8.min(vocab - 3),
        min_sentence_len: 2,
        max_sentence_len: 5,
        seed,
        ..SynthConfig::default()
    })
}

#[derive(Serialize)]
struct NoisyOrResult {
    /// `prod_q p(q|s)` for each sentence.
    sentence_scores: Vec<f64>,
    /// Document score after each sentence is added.
    running: Vec<f64>,
    score: f64,
}

/// `probs[s][q]` is `p(q|s)`: one row per sentence, one column per query term.
pub fn noisy_or_explain(probs_json: &str) -> Result<String, String> {
    let probs: Vec<Vec<f64>> = serde_json::from_str(probs_json).map_err(|e| e.to_string())?;
    if probs.is_empty() {
        return Err("need at least one sentence".into());
    }
    let terms = probs[0].len();
    if terms == 0 || probs.iter().any(|r| r.len() != terms) {
        return Err("every sentence needs the same, non-zero number of term probabilities".into());
    }
    let term_names: Vec<String> = (0..terms).map(|i| i.to_string()).collect();
    let query = Query { query_id: "q".into(), terms: term_names };
    let scorer = |term: &str, s: &[String]| -> clir_core::Result<f64> {
        let row: usize = s[0].parse().expect("sentence index");
        Ok(probs[row][term.parse::<usize>().expect("term index")])
    };
    let mut running = Vec::with_capacity(probs.len());
    for n in 1..=probs.len() {
        let doc = Document {
            doc_id: "d".into(),
            sentences: (0..n).map(|i| vec![i.to_string()]).collect(),
        };
        running.push(noisy_or_doc_score(&scorer, &query, &doc).map_err(|e| e.to_string())?);
    }
    Ok(to_json(&NoisyOrResult {
        sentence_scores: probs.iter().map(|r| r.iter().product()).collect(),
        score: *running.last().expect("non-empty"),
        running,
    }))
}

#[derive(Serialize)]
struct Heatmap {
    foreign: Vec<String>,
    english: Vec<String>,
    /// `p[f][e]`, rows in `foreign` order, columns in `english` order.
    p: Vec<Vec<f64>>,
    log_likelihood: Vec<f64>,
    /// Foreign types whose best translation is the cipher inverse.
    recovered: usize,
}

/// IBM Model 1 on a cipher corpus of `vocab` words after `iterations` EM steps.
pub fn em_heatmap(vocab: usize, iterations: usize, seed: u64) -> Result<String, String> {
    let corpus = demo_corpus(vocab, seed).map_err(|e| e.to_string())?;
    let options = Model1Options { iterations: iterations.clamp(1, 50), tol: 0.0, use_null: true };
    let (table, log_likelihood) = train_model1(&corpus.bitext, options).map_err(|e| e.to_string())?;
    let mut recovered = 0;
    let p = corpus
        .foreign
        .iter()
        .zip(&corpus.english)
        .map(|(f, e)| {
            if table.best_translation(f).map(|(best, _)| best) == Some(e.as_str()) {
                recovered += 1;
            }
            corpus.english.iter().map(|e| table.lookup(f, e)).collect()
        })
        .collect();
    Ok(to_json(&Heatmap {
        foreign: corpus.foreign.clone(),
        english: corpus.english.clone(),
        p,
        log_likelihood,
        recovered,
    }))
}

#[derive(Serialize)]
struct CurvePoint {
    threshold: f64,
    aqwv: f64,
    p_miss: f64,
    p_fa: f64,
}

#[derive(Serialize)]
struct ThresholdCurve {
    map: f64,
    mqwv: f64,
    best_threshold: f64,
    curve: Vec<CurvePoint>,
}

/// AQWV at every distinct score of an occurrence-model run, using a
/// lexicon trained with `iterations` EM steps.
pub fn qwv_curve(vocab: usize, iterations: usize, beta: f64, seed: u64) -> Result<String, String> {
    let corpus = demo_corpus(vocab, seed).map_err(|e| e.to_string())?;
    let options = Model1Options { iterations: iterations.clamp(1, 50), tol: 0.0, use_null: true };
    let (table, _) = train_model1(&corpus.bitext, options).map_err(|e| e.to_string())?;
    let docs = corpus.plain_documents();
    let run = produce_run(
        &|q: &Query, d: &Document| Ok(occurrence_score(q, d, &table)),
        &corpus.queries,
        &docs,
    )
    .map_err(|e| e.to_string())?;
    let best = mqwv(&run, &corpus.qrels, beta).map_err(|e| e.to_string())?;
    let mut thresholds: Vec<f64> = run.rankings().iter().flat_map(|r| r.docs.iter().map(|d| d.score)).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let curve = thresholds
        .into_iter()
        .map(|t| {
            let v = aqwv(&run, &corpus.qrels, t, beta).map_err(|e| e.to_string())?;
            Ok(CurvePoint { threshold: t, aqwv: v.value, p_miss: v.p_miss, p_fa: v.p_fa })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(to_json(&ThresholdCurve {
        map: mean_average_precision(&run, &corpus.qrels).map_err(|e| e.to_string())?,
        mqwv: best.value,
        best_threshold: best.threshold,
        curve,
    }))
}

#[wasm_bindgen(js_name = noisyOr)]
pub fn noisy_or_js(probs_json: &str) -> String {
    noisy_or_explain(probs_json).unwrap_or_else(error_json)
}

#[wasm_bindgen(js_name = emHeatmap)]
pub fn em_heatmap_js(vocab: u32, iterations: u32, seed: u32) -> String {
    em_heatmap(vocab as usize, iterations as usize, seed.into()).unwrap_or_else(error_json)
}

#[wasm_bindgen(js_name = qwvCurve)]
pub fn qwv_curve_js(vocab: u32, iterations: u32, beta: f64, seed: u32) -> String {
    qwv_curve(vocab as usize, iterations as usize, beta, seed.into()).unwrap_or_else(error_json)
}
