//! Flat `key=value` pipeline configuration.
//!
//! Lines are `key=value`; `#` starts a comment; blank lines are ignored.
//! Unknown keys and unparsable values are errors that name the key and line.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lexicon::Model1Options;
use crate::metrics::{EvalConfig, Threshold};
use crate::neural::{Hyper, ModelConfig, ModelKind, Schedule};
use crate::synth::SynthConfig;

trait Value: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty => $what:literal),* $(,)?) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|_| format!("expected {}, got `{s}`", $what))
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(u64 => "an unsigned integer", usize => "an unsigned integer", bool => "true or false");

impl Value for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("expected a finite number, got `{s}`"))
    }
    fn format_value(&self) -> String {
        format!("{self:?}")
    }
}

impl Value for String {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(s.to_string())
    }
    fn format_value(&self) -> String {
        self.clone()
    }
}

impl Value for ModelKind {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse()
            .map_err(|_| format!("expected cross_encoder, qrann or dot_product, got `{s}`"))
    }
    fn format_value(&self) -> String {
        self.name().to_string()
    }
}

impl Value for Schedule {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected constant or linear, got `{s}`"))
    }
    fn format_value(&self) -> String {
        self.name().to_string()
    }
}

impl Value for Threshold {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s == "optimal" {
            return Ok(Threshold::Optimal);
        }
        f64::parse_value(s)
            .map(Threshold::Fixed)
            .map_err(|_| format!("expected `optimal` or a number, got `{s}`"))
    }
    fn format_value(&self) -> String {
        match self {
            Threshold::Optimal => "optimal".into(),
            Threshold::Fixed(t) => t.format_value(),
        }
    }
}

macro_rules! pipeline_config {
    ($($(#[$doc:meta])* $key:ident: $t:ty = $default:expr,)*) => {
        /// Every tunable of the pipeline. Empty `stopwords_path` means the
        /// built-in list; `max_train_samples = 0` means no cap.
        #[derive(Clone, Debug, PartialEq)]
        pub struct PipelineConfig {
            $($(#[$doc])* pub $key: $t,)*
        }

        impl Default for PipelineConfig {
            fn default() -> Self {
                PipelineConfig { $($key: $default,)* }
            }
        }

        impl PipelineConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $(stringify!($key) => self.$key = Value::parse_value(value)?,)*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            /// `(key, value)` for every key, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($key), self.$key.format_value())),*]
            }
        }
    };
}

pipeline_config! {
    seed: u64 = 0,
    min_freq: u64 = 1,
    stopwords_path: String = String::new(),
    neg_per_pos: usize = 2,
    dev_fraction: f64 = 0.1,
    max_train_samples: usize = 0,
    em_iterations: usize = 5,
    em_tol: f64 = 1e-4,
    em_use_null: bool = true,
    prune_min_prob: f64 = 1e-3,
    model_kind: ModelKind = ModelKind::CrossEncoder,
    embed_dim: usize = 32,
    num_layers: usize = 2,
    num_heads: usize = 2,
    ffn_dim: usize = 64,
    max_seq_len: usize = 32,
    lr: f64 = 1e-3,
    lr_schedule: Schedule = Schedule::Constant,
    batch_size: usize = 32,
    epochs: usize = 3,
    adam_beta1: f64 = 0.9,
    adam_beta2: f64 = 0.999,
    adam_eps: f64 = 1e-8,
    alpha: f64 = 0.3,
    beta: f64 = 40.0,
    threshold: f64 = 0.5,
    aqwv_threshold: Threshold = Threshold::Optimal,
    gradcheck_epsilon: f64 = 1e-5,
    synth_vocab: usize = 200,
    synth_stopwords: usize = 12,
    synth_pairs: usize = 2000,
    synth_documents: usize = 100,
    synth_sentences: usize = 5,
    synth_queries: usize = 50,
}

/// Offsets added to the global seed for each randomized stage.
pub mod seed_offset {
    pub const SAMPLES: u64 = 0;
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const SYNTH: u64 = 4;
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = PipelineConfig::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::parse(&text)
    }

    /// Applies `key=value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (index, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    key: line.to_string(),
                    line: index + 1,
                    message: "expected key=value".into(),
                });
            };
            let key = key.trim();
            self.set(key, value.trim()).map_err(|message| Error::Config {
                key: key.to_string(),
                line: index + 1,
                message,
            })?;
        }
        Ok(())
    }

    /// Applies a `key=value` override given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| Error::Config {
            key: assignment.to_string(),
            line: 0,
            message: "expected key=value".into(),
        })?;
        self.set(key.trim(), value.trim()).map_err(|message| Error::Config {
            key: key.trim().to_string(),
            line: 0,
            message,
        })
    }

    pub fn stage_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    /// The resolved configuration, one `key=value` per line, plus the
    /// derived per-stage seeds as comments.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        for (name, offset) in [
            ("samples", seed_offset::SAMPLES),
            ("split", seed_offset::SPLIT),
            ("init", seed_offset::INIT),
            ("shuffle", seed_offset::SHUFFLE),
            ("synth", seed_offset::SYNTH),
        ] {
            let _ = writeln!(out, "# {name}_seed={}", self.stage_seed(offset));
        }
        out
    }

    pub fn model1_options(&self) -> Model1Options {
        Model1Options {
            iterations: self.em_iterations,
            tol: self.em_tol,
            use_null: self.em_use_null,
        }
    }

    pub fn model_config(&self, english_vocab: usize, foreign_vocab: usize) -> ModelConfig {
        ModelConfig {
            kind: self.model_kind,
            english_vocab,
            foreign_vocab,
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
            seed: self.stage_seed(seed_offset::INIT),
        }
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            lr: self.lr,
            schedule: self.lr_schedule,
            batch_size: self.batch_size,
            epochs: self.epochs,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            seed: self.stage_seed(seed_offset::SHUFFLE),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            beta: self.beta,
            threshold: self.aqwv_threshold,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            vocab_size: self.synth_vocab,
            stopwords: self.synth_stopwords,
            bitext_pairs: self.synth_pairs,
            documents: self.synth_documents,
            sentences_per_doc: self.synth_sentences,
            queries: self.synth_queries,
            seed: self.stage_seed(seed_offset::SYNTH),
            ..SynthConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::parse("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.neg_per_pos, 2);
        assert_eq!(c.beta, 40.0);
        assert_eq!(c.em_iterations, 5);
        assert_eq!(c.eval_config().beta, 40.0);
    }

    #[test]
    fn values_comments_and_errors() {
        let c = PipelineConfig::parse("# comment\nbeta=40\n\nmodel_kind = qrann # inline\naqwv_threshold=0.25\n").unwrap();
        assert_eq!(c.model_kind, ModelKind::Qrann);
        assert_eq!(c.aqwv_threshold, Threshold::Fixed(0.25));

        match PipelineConfig::parse("seed=1\nbeta=fast\n") {
            Err(Error::Config { key, line, .. }) => assert_eq!((key.as_str(), line), ("beta", 2)),
            other => panic!("{other:?}"),
        }
        match PipelineConfig::parse("colour=blue") {
            Err(Error::Config { key, line, .. }) => assert_eq!((key.as_str(), line), ("colour", 1)),
            other => panic!("{other:?}"),
        }
        assert!(PipelineConfig::parse("epochs").is_err());
        assert!(PipelineConfig::parse("lr=nan").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = PipelineConfig::default();
        c.apply_override("lr=0.003").unwrap();
        c.apply_override("stopwords_path=/tmp/x y").unwrap();
        c.seed = 17;
        let back = PipelineConfig::parse(&c.echo()).unwrap();
        assert_eq!(back, c);
        assert!(c.echo().contains("# init_seed=19"));
        assert_eq!(PipelineConfig::KEYS.len(), c.entries().len());
    }
}
