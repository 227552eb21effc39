//! Classification and retrieval metrics.
//!
//! Conventions shared by the retrieval metrics:
//! * the evaluated query set is every query in the run plus every query in
//!   the qrels; a judged query missing from the run has an empty ranking and
//!   an unjudged run query has no relevant documents;
//! * queries without relevant documents are left out of MAP and of the miss
//!   rate, but their false alarms still count;
//! * a document is returned at threshold `t` iff its score is `>= t`;
//! * the collection size used by the false-alarm rate is the number of
//!   distinct document ids seen in the run or among the relevant sets.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::corpus::Judgment;
use crate::error::{Error, Result};
use crate::ranker::Run;

/// Relevance judgments: for each judged query, the set of relevant doc ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Qrels {
    judged: BTreeMap<String, BTreeSet<String>>,
}

impl Qrels {
    pub fn from_map(judged: BTreeMap<String, BTreeSet<String>>) -> Self {
        Qrels { judged }
    }

    pub fn from_judgments(judgments: &[Judgment]) -> Self {
        let mut judged: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for j in judgments {
            let set = judged.entry(j.query_id.clone()).or_default();
            if j.relevant {
                set.insert(j.doc_id.clone());
            }
        }
        Qrels { judged }
    }

    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.judged.get(query_id)
    }

    pub fn is_relevant(&self, query_id: &str, doc_id: &str) -> bool {
        self.judged
            .get(query_id)
            .is_some_and(|set| set.contains(doc_id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.judged.iter().map(|(q, s)| (q.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.judged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judged.is_empty()
    }

    /// Serializes relevant pairs as `query_id<TAB>doc_id<TAB>1` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judged {
            for d in docs {
                out.push_str(&format!("{q}\t{d}\t1\n"));
            }
        }
        out
    }
}

/// Row-normalized 2x2 confusion matrix. Rows are the true class, columns
/// the predicted class, positive first in both.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
    pub rows: [[f64; 2]; 2],
}

impl ConfusionMatrix {
    fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        let mut rows = [[0.0; 2]; 2];
        for (row, count) in rows.iter_mut().zip(counts.iter()) {
            let total = count[0] + count[1];
            if total > 0 {
                row[0] = count[0] as f64 / total as f64;
                row[1] = count[1] as f64 / total as f64;
            }
        }
        ConfusionMatrix { counts, rows }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// A prediction at or above `threshold` counts as positive.
pub fn classification_report(
    predictions: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<ClassificationReport> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("no predictions to evaluate".into()));
    }
    let mut counts = [[0u64; 2]; 2];
    for (&p, &label) in predictions.iter().zip(labels) {
        let row = usize::from(!label);
        let col = usize::from(p < threshold);
        counts[row][col] += 1;
    }
    let correct = counts[0][0] + counts[1][1];
    Ok(ClassificationReport {
        accuracy: correct as f64 / predictions.len() as f64,
        confusion: ConfusionMatrix::from_counts(counts),
    })
}

/// Average precision of one ranking; `None` when nothing is relevant.
/// Relevant documents missing from the ranking contribute zero.
pub fn average_precision<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, doc) in ranked.iter().enumerate() {
        if relevant.contains(doc.as_ref()) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

fn evaluated_queries<'a>(run: &'a Run, qrels: &'a Qrels) -> BTreeSet<&'a str> {
    run.query_ids()
        .chain(qrels.iter().map(|(q, _)| q))
        .collect()
}

static EMPTY: BTreeSet<String> = BTreeSet::new();

/// Mean of per-query AP over queries with at least one relevant document,
/// taken in ascending query-id order.
pub fn mean_average_precision(run: &Run, qrels: &Qrels) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for query_id in evaluated_queries(run, qrels) {
        let relevant = qrels.relevant(query_id).unwrap_or(&EMPTY);
        let ranked: Vec<&str> = run
            .ranking(query_id)
            .map(|r| r.iter().map(|d| d.doc_id.as_str()).collect())
            .unwrap_or_default();
        if let Some(ap) = average_precision(&ranked, relevant) {
            total += ap;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Undefined("no query has a relevant document".into()));
    }
    Ok(total / n as f64)
}

/// Per-query detection counts at one threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Detections {
    relevant: usize,
    hits: usize,
    false_alarms: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QueryWeightedValue {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
    pub value: f64,
}

fn qwv_from_counts(counts: &[Detections], n_docs: usize, beta: f64, threshold: f64) -> QueryWeightedValue {
    let (mut miss_sum, mut miss_n) = (0.0, 0usize);
    let (mut fa_sum, mut fa_n) = (0.0, 0usize);
    for c in counts {
        if c.relevant > 0 {
            miss_sum += (c.relevant - c.hits) as f64 / c.relevant as f64;
            miss_n += 1;
        }
        let non_relevant = n_docs - c.relevant;
        if non_relevant > 0 {
            fa_sum += c.false_alarms as f64 / non_relevant as f64;
            fa_n += 1;
        }
    }
    let p_miss = if miss_n > 0 { miss_sum / miss_n as f64 } else { 0.0 };
    let p_fa = if fa_n > 0 { fa_sum / fa_n as f64 } else { 0.0 };
    QueryWeightedValue {
        threshold,
        p_miss,
        p_fa,
        value: 1.0 - p_miss - beta * p_fa,
    }
}

struct DetectionSetup<'a> {
    queries: Vec<&'a str>,
    relevant: Vec<&'a BTreeSet<String>>,
    n_docs: usize,
}

fn detection_setup<'a>(run: &'a Run, qrels: &'a Qrels, beta: f64) -> Result<DetectionSetup<'a>> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let queries: Vec<&str> = evaluated_queries(run, qrels).into_iter().collect();
    let relevant: Vec<&BTreeSet<String>> = queries
        .iter()
        .map(|q| qrels.relevant(q).unwrap_or(&EMPTY))
        .collect();
    let mut docs: BTreeSet<&str> = run
        .rankings()
        .iter()
        .flat_map(|r| r.docs.iter().map(|d| d.doc_id.as_str()))
        .collect();
    for set in &relevant {
        docs.extend(set.iter().map(String::as_str));
    }
    if docs.is_empty() {
        return Err(Error::Undefined("the collection holds no documents".into()));
    }
    Ok(DetectionSetup {
        queries,
        relevant,
        n_docs: docs.len(),
    })
}

/// `1 - mean P_Miss - beta * mean P_FA` with one global detection threshold.
pub fn aqwv(run: &Run, qrels: &Qrels, threshold: f64, beta: f64) -> Result<QueryWeightedValue> {
    let setup = detection_setup(run, qrels, beta)?;
    let counts: Vec<Detections> = setup
        .queries
        .iter()
        .zip(&setup.relevant)
        .map(|(q, relevant)| {
            let mut c = Detections {
                relevant: relevant.len(),
                ..Default::default()
            };
            for d in run.ranking(q).unwrap_or(&[]) {
                if d.score >= threshold {
                    if relevant.contains(&d.doc_id) {
                        c.hits += 1;
                    } else {
                        c.false_alarms += 1;
                    }
                }
            }
            c
        })
        .collect();
    Ok(qwv_from_counts(&counts, setup.n_docs, beta, threshold))
}

/// The best AQWV over a single global threshold. Candidates are every
/// distinct score in the run and one value above the largest; ties keep the
/// larger threshold.
pub fn mqwv(run: &Run, qrels: &Qrels, beta: f64) -> Result<QueryWeightedValue> {
    let setup = detection_setup(run, qrels, beta)?;
    let position: HashMap<&str, usize> = setup
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| (*q, i))
        .collect();
    let mut counts: Vec<Detections> = setup
        .relevant
        .iter()
        .map(|r| Detections {
            relevant: r.len(),
            ..Default::default()
        })
        .collect();

    // (score, query index, relevant), highest score first.
    let mut entries: Vec<(f64, usize, bool)> = run
        .rankings()
        .iter()
        .flat_map(|r| {
            let qi = position[r.query_id.as_str()];
            let relevant = setup.relevant[qi];
            r.docs
                .iter()
                .map(move |d| (d.score, qi, relevant.contains(&d.doc_id)))
        })
        .collect();
    entries.sort_by(|a, b| b.0.total_cmp(&a.0));

    let above = entries.first().map_or(f64::INFINITY, |e| e.0.next_up());
    let mut best = qwv_from_counts(&counts, setup.n_docs, beta, above);
    let mut i = 0;
    while i < entries.len() {
        let score = entries[i].0;
        while i < entries.len() && entries[i].0 == score {
            let (_, qi, relevant) = entries[i];
            if relevant {
                counts[qi].hits += 1;
            } else {
                counts[qi].false_alarms += 1;
            }
            i += 1;
        }
        let candidate = qwv_from_counts(&counts, setup.n_docs, beta, score);
        if candidate.value > best.value {
            best = candidate;
        }
    }
    Ok(best)
}

/// How the detection threshold for AQWV is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    Optimal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub beta: f64,
    pub threshold: Threshold,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            beta: 40.0,
            threshold: Threshold::Optimal,
        }
    }
}

/// Everything the `evaluate` command reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub map: Option<f64>,
    pub aqwv: Option<f64>,
    pub mqwv: Option<f64>,
    pub threshold: Option<f64>,
    pub accuracy: Option<f64>,
    pub confusion: Option<[[f64; 2]; 2]>,
}

impl Report {
    pub fn retrieval(run: &Run, qrels: &Qrels, config: &EvalConfig) -> Result<Self> {
        let best = mqwv(run, qrels, config.beta)?;
        let at = match config.threshold {
            Threshold::Fixed(t) => aqwv(run, qrels, t, config.beta)?,
            Threshold::Optimal => best,
        };
        Ok(Report {
            map: Some(mean_average_precision(run, qrels)?),
            aqwv: Some(at.value),
            mqwv: Some(best.value),
            threshold: Some(at.threshold),
            ..Default::default()
        })
    }

    pub fn with_classification(mut self, report: &ClassificationReport) -> Self {
        self.accuracy = Some(report.accuracy);
        self.confusion = Some(report.confusion.rows);
        self
    }

    /// `key<TAB>value` lines for the fields that are present.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let scalar = [
            ("map", self.map),
            ("aqwv", self.aqwv),
            ("mqwv", self.mqwv),
            ("threshold", self.threshold),
            ("accuracy", self.accuracy),
        ];
        for (key, value) in scalar {
            if let Some(v) = value {
                out.push_str(&format!("{key}\t{v}\n"));
            }
        }
        if let Some(m) = self.confusion {
            out.push_str(&format!(
                "confusion\t{} {}; {} {}\n",
                m[0][0], m[0][1], m[1][0], m[1][1]
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}
