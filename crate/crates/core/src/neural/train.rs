//! Mini-batch Adam on mean binary cross-entropy.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use super::model::example_graph;
use super::tape::{self, Graph};
use super::{Checkpoint, ModelConfig, TokenMap};
use crate::error::{Error, Result};
use crate::weaksup::TrainingSample;

/// A sample mapped into model token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub q: usize,
    pub s: Vec<usize>,
    pub label: bool,
}

impl Example {
    pub fn encode(sample: &TrainingSample, tokens: &TokenMap) -> Self {
        Example {
            q: tokens.english_id(&sample.query),
            s: sample.sentence.iter().map(|t| tokens.foreign_id(t)).collect(),
            label: sample.label,
        }
    }
}

impl TokenMap {
    /// Every query term and sentence token seen in `samples`, sorted.
    pub fn from_samples<'a, I>(samples: I) -> Result<TokenMap>
    where
        I: IntoIterator<Item = &'a TrainingSample>,
    {
        let mut english = BTreeSet::new();
        let mut foreign = BTreeSet::new();
        for s in samples {
            english.insert(s.query.clone());
            foreign.extend(s.sentence.iter().cloned());
        }
        TokenMap::new(english.into_iter().collect(), foreign.into_iter().collect())
    }
}

/// Clamped binary cross-entropy.
pub fn bce_loss(pred: f64, label: bool) -> f64 {
    tape::bce(pred, if label { 1.0 } else { 0.0 })
}

/// Learning-rate schedule over all update steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Linear decay from `lr` at the first step to zero after the last.
    Linear,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::Linear => "linear",
        }
    }

    /// Rate for 0-based `step` of `total`.
    pub fn rate(self, lr: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => lr,
            Schedule::Linear => lr * (total - step) as f64 / total as f64,
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "linear" => Ok(Schedule::Linear),
            _ => Err(Error::InvalidArgument(format!("unknown schedule `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr: 1e-3,
            schedule: Schedule::Constant,
            batch_size: 32,
            epochs: 3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

/// Train statistics are running means over the epoch, taken before each
/// batch's update. Dev statistics are `None` without dev samples.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev_loss: Option<f64>,
    pub dev_accuracy: Option<f64>,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_accuracy,dev_loss,dev_accuracy";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(crate::format_sig17).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.epoch,
            crate::format_sig17(self.train_loss),
            crate::format_sig17(self.train_accuracy),
            opt(self.dev_loss),
            opt(self.dev_accuracy)
        )
    }
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[Vec<f64>], hyper: &Hyper) -> Self {
        Adam {
            beta1: hyper.beta1,
            beta2: hyper.beta2,
            eps: hyper.eps,
            step: 0,
            m: shapes.iter().map(|g| vec![0.0; g.len()]).collect(),
            v: shapes.iter().map(|g| vec![0.0; g.len()]).collect(),
        }
    }

    /// One bias-corrected update. A zero gradient never moves a parameter
    /// whose moments are still zero.
    pub fn update(&mut self, params: &mut super::Params, grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for (k, p) in t.values_mut().iter_mut().enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Mean loss and accuracy at threshold 0.5.
pub fn evaluate(ckpt: &Checkpoint, examples: &[Example]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for ex in examples {
        let p = super::model::forward(ckpt, ex.q, &ex.s)?;
        loss += bce_loss(p, ex.label);
        correct += usize::from((p >= 0.5) == ex.label);
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub fn train(config: ModelConfig, train: &[Example], dev: &[Example], hyper: &Hyper) -> Result<(Checkpoint, Vec<EpochStats>)> {
    train_with(config, train, dev, hyper, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    config: ModelConfig,
    train: &[Example],
    dev: &[Example],
    hyper: &Hyper,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    if !(hyper.lr >= 0.0) || !hyper.lr.is_finite() {
        return Err(Error::InvalidArgument("lr must be a finite non-negative number".into()));
    }
    let mut ckpt = Checkpoint::init(config)?;
    let mut grads = ckpt.params.zero_grads();
    let mut adam = Adam::new(&grads, hyper);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(hyper.epochs);
    let total_steps = hyper.epochs * train.len().div_ceil(hyper.batch_size);
    let mut global_step = 0;

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for (step, batch) in order.chunks(hyper.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x = 0.0));
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &train[i];
                let mut g = Graph::new(&ckpt.params);
                let p = example_graph(&mut g, &ckpt.params, &ckpt.config, ex.q, &ex.s)?;
                let prob = g.scalar(p);
                let loss = g.bce(p, if ex.label { 1.0 } else { 0.0 });
                g.backward(loss, &mut grads);
                batch_loss += g.scalar(loss);
                correct += usize::from((prob >= 0.5) == ex.label);
            }
            let mean = batch_loss / batch.len() as f64;
            if !mean.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step: step + 1,
                    loss: mean,
                });
            }
            total_loss += batch_loss;
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= inv));
            adam.update(&mut ckpt.params, &grads, hyper.schedule.rate(hyper.lr, global_step, total_steps));
            global_step += 1;
        }
        let (dev_loss, dev_accuracy) = if dev.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(&ckpt, dev)?;
            (Some(l), Some(a))
        };
        let stats = EpochStats {
            epoch,
            train_loss: total_loss / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            dev_loss,
            dev_accuracy,
        };
        on_epoch(&stats);
        curve.push(stats);
    }
    Ok((ckpt, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{ModelKind, Params};

    fn examples() -> Vec<Example> {
        // Query 4 is relevant when foreign token 8 is present, query 5 when 9 is.
        vec![
            Example { q: 4, s: vec![8, 10], label: true },
            Example { q: 4, s: vec![9, 10], label: false },
            Example { q: 5, s: vec![9, 11], label: true },
            Example { q: 5, s: vec![8, 11], label: false },
            Example { q: 4, s: vec![11, 8], label: true },
            Example { q: 5, s: vec![10, 9], label: true },
            Example { q: 4, s: vec![10, 11], label: false },
            Example { q: 5, s: vec![10, 11], label: false },
            Example { q: 4, s: vec![8], label: true },
            Example { q: 5, s: vec![8], label: false },
        ]
    }

    fn small(kind: ModelKind) -> ModelConfig {
        let mut c = ModelConfig::toy(kind, 2, 6, 5);
        c.embed_dim = 16;
        c.num_layers = 1;
        c.ffn_dim = 32;
        c.max_seq_len = 8;
        c
    }

    #[test]
    fn bce_examples() {
        assert!(bce_loss(1.0, true) < 1e-11);
        assert!((bce_loss(0.5, false) - 0.693_147).abs() < 1e-6);
        assert!((bce_loss(0.9, false) - 2.302_585).abs() < 1e-6);
    }

    #[test]
    fn overfits_separable_samples() {
        let hyper = Hyper { lr: 1e-2, batch_size: 10, epochs: 200, seed: 1, ..Hyper::default() };
        let (ckpt, curve) = train(small(ModelKind::CrossEncoder), &examples(), &[], &hyper).unwrap();
        let (_, acc) = evaluate(&ckpt, &examples()).unwrap();
        assert_eq!(acc, 1.0);
        assert!(curve.iter().any(|s| s.train_accuracy == 1.0));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let config = small(ModelKind::Qrann);
        let hyper = Hyper { lr: 0.0, batch_size: 3, epochs: 4, ..Hyper::default() };
        let (ckpt, _) = train(config.clone(), &examples(), &[], &hyper).unwrap();
        assert!(ckpt.bitwise_eq(&Checkpoint::init(config).unwrap()));
    }

    #[test]
    fn zero_gradient_step_is_a_no_op() {
        let c = Checkpoint::init(small(ModelKind::DotProduct)).unwrap();
        let mut params: Params = c.params.clone();
        let grads = params.zero_grads();
        let mut adam = Adam::new(&grads, &Hyper::default());
        adam.update(&mut params, &grads, 1e-3);
        assert!(params.bitwise_eq(&c.params));
    }

    #[test]
    fn training_is_deterministic() {
        let hyper = Hyper { epochs: 3, batch_size: 4, seed: 9, ..Hyper::default() };
        let ex = examples();
        let a = train(small(ModelKind::CrossEncoder), &ex, &ex[..4], &hyper).unwrap();
        let b = train(small(ModelKind::CrossEncoder), &ex, &ex[..4], &hyper).unwrap();
        assert!(a.0.bitwise_eq(&b.0));
        assert_eq!(format!("{:?}", a.1), format!("{:?}", b.1));
    }
}
