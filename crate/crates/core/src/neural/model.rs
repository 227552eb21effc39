//! Parameter layouts and forward passes for the three model kinds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tape::{Graph, Var};
use super::tensor::{Params, Tensor};
use super::{pack_input, Checkpoint, ModelConfig, ModelKind, PackedInput};
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Embedding,
    /// A weight matrix with the given fan-in.
    Weight(usize),
    Gain,
    Bias,
}

/// Every parameter the config implies, sorted by name.
pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, ParamRole)> {
    let d = config.embed_dim;
    let f = config.ffn_dim;
    let mut out = vec![("embed.token".to_string(), vec![config.vocab_size(), d], ParamRole::Embedding)];
    let mut push = |name: String, shape: Vec<usize>, role| out.push((name, shape, role));
    match config.kind {
        ModelKind::CrossEncoder => {
            push("embed.position".into(), vec![config.max_seq_len, d], ParamRole::Embedding);
            push("embed.segment".into(), vec![2, d], ParamRole::Embedding);
            for i in 0..config.num_layers {
                let p = format!("encoder.{i}");
                for part in ["query", "key", "value", "output"] {
                    push(format!("{p}.attention.{part}.weight"), vec![d, d], ParamRole::Weight(d));
                    // A key bias only shifts each softmax row, so it is left out.
                    if part != "key" {
                        push(format!("{p}.attention.{part}.bias"), vec![d], ParamRole::Bias);
                    }
                }
                for norm in ["attention_norm", "ffn_norm"] {
                    push(format!("{p}.{norm}.gain"), vec![d], ParamRole::Gain);
                    push(format!("{p}.{norm}.bias"), vec![d], ParamRole::Bias);
                }
                push(format!("{p}.ffn.hidden.weight"), vec![d, f], ParamRole::Weight(d));
                push(format!("{p}.ffn.hidden.bias"), vec![f], ParamRole::Bias);
                push(format!("{p}.ffn.output.weight"), vec![f, d], ParamRole::Weight(f));
                push(format!("{p}.ffn.output.bias"), vec![d], ParamRole::Bias);
            }
            push("head.weight".into(), vec![d, 1], ParamRole::Weight(d));
            push("head.bias".into(), vec![1], ParamRole::Bias);
        }
        ModelKind::Qrann => {
            push("attention.bilinear".into(), vec![d, d], ParamRole::Weight(d));
            push("ffn.hidden.weight".into(), vec![3 * d, f], ParamRole::Weight(3 * d));
            push("ffn.hidden.bias".into(), vec![f], ParamRole::Bias);
            push("ffn.output.weight".into(), vec![f, 1], ParamRole::Weight(f));
            push("ffn.output.bias".into(), vec![1], ParamRole::Bias);
        }
        ModelKind::DotProduct => {
            push("attention.bilinear".into(), vec![d, d], ParamRole::Weight(d));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Training init: normal(0, 0.02) weights and embeddings, unit gains, zero biases.
pub fn init_params(config: &ModelConfig) -> Result<Params> {
    config.validate()?;
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let named = layout(config)
        .into_iter()
        .map(|(name, shape, role)| {
            let n: usize = shape.iter().product();
            let values = match role {
                ParamRole::Embedding | ParamRole::Weight(_) => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                ParamRole::Gain => vec![1.0; n],
                ParamRole::Bias => vec![0.0; n],
            };
            (name, Tensor::new(shape, values).expect("layout shape"))
        })
        .collect();
    Params::from_named(named)
}

/// Unit-scale init for finite-difference checks: with std 0.02 most
/// gradients sit near the finite-difference noise floor. Embeddings use
/// std `d^-1/4` so bilinear attention logits have unit variance.
pub fn init_params_conditioned(config: &ModelConfig) -> Result<Params> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid std");
    let embed_std = (config.embed_dim as f64).powf(-0.25);
    let named = layout(config)
        .into_iter()
        .map(|(name, shape, role)| {
            let n: usize = shape.iter().product();
            let values = (0..n)
                .map(|_| {
                    let z: f64 = unit.sample(&mut rng);
                    match role {
                        ParamRole::Embedding => embed_std * z,
                        ParamRole::Weight(fan_in) => z / (fan_in as f64).sqrt(),
                        ParamRole::Gain => 1.0 + 0.1 * z,
                        ParamRole::Bias => 0.1 * z,
                    }
                })
                .collect();
            (name, Tensor::new(shape, values).expect("layout shape"))
        })
        .collect();
    Params::from_named(named)
}

/// Checks that `params` holds exactly the parameters `config` implies.
pub fn check_layout(config: &ModelConfig, params: &Params) -> Result<()> {
    let expected = layout(config);
    if expected.len() != params.len() {
        return Err(Error::Shape(format!(
            "expected {} parameters for {}, found {}",
            expected.len(),
            config.kind,
            params.len()
        )));
    }
    for ((name, shape, _), (have, t)) in expected.iter().zip(params.iter()) {
        if name != have || shape.as_slice() != t.shape() {
            return Err(Error::Shape(format!(
                "expected parameter `{name}` {shape:?}, found `{have}` {:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

fn param(g: &mut Graph<'_>, params: &Params, name: &str) -> Var {
    let i = params.index(name).unwrap_or_else(|| panic!("missing parameter `{name}`"));
    g.param(i)
}

/// Cross-encoder over the first `len` positions of `input`. Returns the
/// relevance probability and the attention weights per layer and head.
pub(crate) fn cross_encoder_graph(
    g: &mut Graph<'_>,
    params: &Params,
    config: &ModelConfig,
    input: &PackedInput,
    len: usize,
) -> (Var, Vec<Vec<Var>>) {
    let d = config.embed_dim;
    let heads = config.num_heads;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let key_mask: Vec<bool> = input.mask[..len].iter().map(|&m| m == 1).collect();

    let table = param(g, params, "embed.token");
    let pos_table = param(g, params, "embed.position");
    let seg_table = param(g, params, "embed.segment");
    let tok = g.gather(table, &input.tokens[..len]);
    let pos = g.gather(pos_table, &input.positions[..len]);
    let seg = g.gather(seg_table, &input.segments[..len]);
    let x = g.add(tok, pos);
    let mut x = g.add(x, seg);

    let mut attention = Vec::with_capacity(config.num_layers);
    for layer in 0..config.num_layers {
        let p = |s: &str| format!("encoder.{layer}.{s}");
        let wq = param(g, params, &p("attention.query.weight"));
        let bq = param(g, params, &p("attention.query.bias"));
        let wk = param(g, params, &p("attention.key.weight"));
        let wv = param(g, params, &p("attention.value.weight"));
        let bv = param(g, params, &p("attention.value.bias"));
        let q = g.matmul(x, wq);
        let q = g.add_row(q, bq);
        let k = g.matmul(x, wk);
        let v = g.matmul(x, wv);
        let v = g.add_row(v, bv);

        let mut contexts = Vec::with_capacity(heads);
        let mut weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.columns(q, h * dh, dh);
            let kh = g.columns(k, h * dh, dh);
            let vh = g.columns(v, h * dh, dh);
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let a = g.masked_softmax(scores, &key_mask);
            weights.push(a);
            contexts.push(g.matmul(a, vh));
        }
        attention.push(weights);
        let ctx = if heads == 1 { contexts[0] } else { g.concat(&contexts) };

        let wo = param(g, params, &p("attention.output.weight"));
        let bo = param(g, params, &p("attention.output.bias"));
        let o = g.matmul(ctx, wo);
        let o = g.add_row(o, bo);
        let r = g.add(x, o);
        let gain = param(g, params, &p("attention_norm.gain"));
        let bias = param(g, params, &p("attention_norm.bias"));
        x = g.layer_norm(r, gain, bias);

        let w1 = param(g, params, &p("ffn.hidden.weight"));
        let b1 = param(g, params, &p("ffn.hidden.bias"));
        let w2 = param(g, params, &p("ffn.output.weight"));
        let b2 = param(g, params, &p("ffn.output.bias"));
        let hdn = g.matmul(x, w1);
        let hdn = g.add_row(hdn, b1);
        let hdn = g.gelu(hdn);
        let f = g.matmul(hdn, w2);
        let f = g.add_row(f, b2);
        let r = g.add(x, f);
        let gain = param(g, params, &p("ffn_norm.gain"));
        let bias = param(g, params, &p("ffn_norm.bias"));
        x = g.layer_norm(r, gain, bias);
    }
    debug_assert_eq!(g.dims(x), (len, d));

    let cls = g.rows(x, 0, 1);
    let hw = param(g, params, "head.weight");
    let hb = param(g, params, "head.bias");
    let logit = g.matmul(cls, hw);
    let logit = g.add_row(logit, hb);
    (g.sigmoid(logit), attention)
}

/// Bilinear attention of the query embedding over the sentence embeddings.
/// Returns `(e_q, c)`.
fn context_vector(g: &mut Graph<'_>, params: &Params, q: usize, s: &[usize]) -> (Var, Var) {
    let table = param(g, params, "embed.token");
    let w = param(g, params, "attention.bilinear");
    let eq = g.gather(table, &[q]);
    let es = g.gather(table, s);
    let projected = g.matmul(eq, w);
    let logits = g.matmul_t(projected, es);
    let a = g.softmax(logits);
    let c = g.matmul(a, es);
    (eq, c)
}

pub(crate) fn dot_product_graph(g: &mut Graph<'_>, params: &Params, q: usize, s: &[usize]) -> Var {
    let (eq, c) = context_vector(g, params, q, s);
    let z = g.matmul_t(eq, c);
    g.sigmoid(z)
}

pub(crate) fn qrann_graph(g: &mut Graph<'_>, params: &Params, q: usize, s: &[usize]) -> Var {
    let (eq, c) = context_vector(g, params, q, s);
    let prod = g.mul(eq, c);
    let features = g.concat(&[eq, c, prod]);
    let w1 = param(g, params, "ffn.hidden.weight");
    let b1 = param(g, params, "ffn.hidden.bias");
    let w2 = param(g, params, "ffn.output.weight");
    let b2 = param(g, params, "ffn.output.bias");
    let h = g.matmul(features, w1);
    let h = g.add_row(h, b1);
    let h = g.gelu(h);
    let z = g.matmul(h, w2);
    let z = g.add_row(z, b2);
    g.sigmoid(z)
}

fn check_ids(config: &ModelConfig, ids: &[usize]) -> Result<()> {
    match ids.iter().find(|&&id| id >= config.vocab_size()) {
        Some(id) => Err(Error::Shape(format!(
            "token id {id} outside vocabulary of {}",
            config.vocab_size()
        ))),
        None => Ok(()),
    }
}

/// Builds the probability node for one (query id, foreign ids) example.
pub fn example_graph(
    g: &mut Graph<'_>,
    params: &Params,
    config: &ModelConfig,
    q: usize,
    s: &[usize],
) -> Result<Var> {
    check_ids(config, &[q])?;
    check_ids(config, s)?;
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty foreign sentence".into()));
    }
    let s = &s[..s.len().min(super::max_foreign_len(config.max_seq_len))];
    Ok(match config.kind {
        ModelKind::CrossEncoder => {
            let input = pack_input(q, s, config.max_seq_len)?;
            let len = input.real_len();
            cross_encoder_graph(g, params, config, &input, len).0
        }
        ModelKind::Qrann => qrann_graph(g, params, q, s),
        ModelKind::DotProduct => dot_product_graph(g, params, q, s),
    })
}

fn expect_kind(ckpt: &Checkpoint, kind: ModelKind) -> Result<()> {
    if ckpt.config.kind != kind {
        return Err(Error::InvalidArgument(format!(
            "checkpoint holds a {} model, not {kind}",
            ckpt.config.kind
        )));
    }
    Ok(())
}

fn check_packed(config: &ModelConfig, input: &PackedInput) -> Result<()> {
    let l = input.tokens.len();
    if l != config.max_seq_len
        || input.segments.len() != l
        || input.positions.len() != l
        || input.mask.len() != l
    {
        return Err(Error::Shape(format!(
            "packed input of length {l} does not match max_seq_len {}",
            config.max_seq_len
        )));
    }
    check_ids(config, &input.tokens)?;
    if input.segments.iter().any(|&s| s > 1) || input.positions.iter().any(|&p| p >= l) {
        return Err(Error::Shape("segment or position id out of range".into()));
    }
    Ok(())
}

/// `p(q|s)` from the cross-encoder. Only the real prefix is computed;
/// padding is masked out of attention and so cannot change the result.
pub fn forward_cross_encoder(ckpt: &Checkpoint, input: &PackedInput) -> Result<f64> {
    expect_kind(ckpt, ModelKind::CrossEncoder)?;
    check_packed(&ckpt.config, input)?;
    let mut g = Graph::new(&ckpt.params);
    let (p, _) = cross_encoder_graph(&mut g, &ckpt.params, &ckpt.config, input, input.real_len());
    Ok(g.scalar(p))
}

/// Same as [`forward_cross_encoder`] but runs every position, padding included.
pub fn forward_cross_encoder_padded(ckpt: &Checkpoint, input: &PackedInput) -> Result<f64> {
    expect_kind(ckpt, ModelKind::CrossEncoder)?;
    check_packed(&ckpt.config, input)?;
    let mut g = Graph::new(&ckpt.params);
    let (p, _) = cross_encoder_graph(&mut g, &ckpt.params, &ckpt.config, input, input.len());
    Ok(g.scalar(p))
}

pub fn forward_dot_product(ckpt: &Checkpoint, q: usize, s: &[usize]) -> Result<f64> {
    expect_kind(ckpt, ModelKind::DotProduct)?;
    forward(ckpt, q, s)
}

pub fn forward_qrann(ckpt: &Checkpoint, q: usize, s: &[usize]) -> Result<f64> {
    expect_kind(ckpt, ModelKind::Qrann)?;
    forward(ckpt, q, s)
}

/// `p(q|s)` for any model kind.
pub fn forward(ckpt: &Checkpoint, q: usize, s: &[usize]) -> Result<f64> {
    let mut g = Graph::new(&ckpt.params);
    let p = example_graph(&mut g, &ckpt.params, &ckpt.config, q, s)?;
    Ok(g.scalar(p))
}

/// Post-softmax attention weights indexed `[layer][head][from][to]` over
/// the full padded sequence. Padding columns carry exactly zero weight.
pub fn attention_trace(ckpt: &Checkpoint, input: &PackedInput) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
    expect_kind(ckpt, ModelKind::CrossEncoder)?;
    check_packed(&ckpt.config, input)?;
    let mut g = Graph::new(&ckpt.params);
    let (_, attention) = cross_encoder_graph(&mut g, &ckpt.params, &ckpt.config, input, input.len());
    let l = input.len();
    Ok(attention
        .iter()
        .map(|heads| {
            heads
                .iter()
                .map(|&a| g.value(a).chunks(l).map(<[f64]>::to_vec).collect())
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt(kind: ModelKind) -> Checkpoint {
        let mut c = ModelConfig::toy(kind, 6, 7, 11);
        c.max_seq_len = 10;
        Checkpoint::init(c).unwrap()
    }

    fn zero(ckpt: &mut Checkpoint, name: &str) {
        ckpt.params.get_mut(name).unwrap().values_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    #[test]
    fn layouts_are_sorted_and_initialized() {
        for kind in ModelKind::ALL {
            let c = ckpt(kind);
            check_layout(&c.config, &c.params).unwrap();
            assert!(c.params.get("embed.token").is_some());
        }
        let c = ckpt(ModelKind::CrossEncoder);
        assert!(c.params.get("encoder.1.attention.key.bias").is_none());
        assert!(c.params.get("encoder.0.ffn_norm.gain").unwrap().values().iter().all(|&v| v == 1.0));
        assert!(c.params.get("head.bias").unwrap().values() == [0.0]);
    }

    #[test]
    fn zero_heads_give_one_half() {
        let mut c = ckpt(ModelKind::CrossEncoder);
        zero(&mut c, "head.weight");
        let input = pack_input(5, &[12, 14, 15], 10).unwrap();
        assert_eq!(forward_cross_encoder(&c, &input).unwrap(), 0.5);

        let mut c = ckpt(ModelKind::Qrann);
        zero(&mut c, "ffn.output.weight");
        assert_eq!(forward_qrann(&c, 5, &[12, 14]).unwrap(), 0.5);

        let mut c = ckpt(ModelKind::DotProduct);
        zero(&mut c, "embed.token");
        assert_eq!(forward_dot_product(&c, 5, &[12, 14]).unwrap(), 0.5);
    }

    #[test]
    fn duplicate_tokens_do_not_change_dot_product() {
        let c = ckpt(ModelKind::DotProduct);
        let once = forward_dot_product(&c, 4, &[13]).unwrap();
        let twice = forward_dot_product(&c, 4, &[13, 13]).unwrap();
        assert!((once - twice).abs() < 1e-15);
    }

    #[test]
    fn padding_is_inert() {
        let c = ckpt(ModelKind::CrossEncoder);
        let input = pack_input(5, &[12, 14, 15], 10).unwrap();
        let a = forward_cross_encoder(&c, &input).unwrap();
        let b = forward_cross_encoder_padded(&c, &input).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn trace_shape_and_masking() {
        let c = ckpt(ModelKind::CrossEncoder);
        let input = pack_input(5, &[12, 14, 15], 10).unwrap();
        let trace = attention_trace(&c, &input).unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace[0].len(), 2);
        assert_eq!(trace[0][0].len(), 10);
        for row in trace.iter().flatten().flatten() {
            assert_eq!(row.len(), 10);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row[7..].iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn wrong_kind_and_ids_are_rejected() {
        let c = ckpt(ModelKind::DotProduct);
        assert!(forward_qrann(&c, 5, &[12]).is_err());
        assert!(forward(&c, 5, &[]).is_err());
        assert!(matches!(forward(&c, 500, &[12]), Err(Error::Shape(_))));
    }
}
