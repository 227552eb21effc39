//! Cross-lingual retrieval workbench.
//!
//! English queries, foreign-language documents. Training data comes from
//! bitext alone: a foreign sentence is relevant to an English word when the
//! word occurs in its translation. The crate covers the whole loop from
//! loading text to scoring runs:
//!
//! * [`corpus`]: tokenization, vocabularies and the file loaders;
//! * [`weaksup`]: labeled (term, sentence) samples with negative sampling;
//! * [`lexicon`]: IBM Model 1 translation tables `p(e|f)`;
//! * [`probrank`]: the occurrence and generative probabilistic scorers;
//! * [`neural`]: autodiff, the cross-encoder, QRANN and dot-product scorers;
//! * [`ranker`]: Noisy-OR document scoring and ranked runs;
//! * [`metrics`]: accuracy, MAP, AQWV and MQWV;
//! * [`config`]: the flat `key=value` pipeline configuration;
//! * [`synth`]: a seeded cipher-language corpus with known ground truth.

pub mod config;
pub mod corpus;
pub mod error;
pub mod lexicon;
pub mod metrics;
pub mod neural;
pub mod probrank;
pub mod ranker;
pub mod synth;
pub mod weaksup;

pub use error::{Error, Result};

/// Formats a float with 17 significant digits, enough to round-trip exactly.
pub fn format_sig17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    use super::format_sig17;

    #[test]
    fn sig17_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5, 0.0, f64::MIN_POSITIVE, f64::NEG_INFINITY] {
            let s = format_sig17(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_sig17(0.5), "5.0000000000000000e-1");
    }
}
