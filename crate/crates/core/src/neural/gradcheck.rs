//! Reverse-mode gradients against central finite differences.

use super::model::{example_graph, init_params_conditioned};
use super::tape::{Graph, Var};
use super::tensor::Params;
use super::train::Example;
use super::{ModelConfig, ModelKind, NUM_SPECIAL};
use crate::error::{Error, Result};

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / REL_FLOOR.max(analytic.abs() + numeric.abs())
}

/// Max relative error over every parameter value between backpropagated
/// gradients of the scalar built by `loss` and `(f(x+e) - f(x-e)) / 2e`.
pub fn grad_check_params<F>(params: &Params, epsilon: f64, loss: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>, &Params) -> Result<Var>,
{
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut analytic = params.zero_grads();
    {
        let mut g = Graph::new(params);
        let root = loss(&mut g, params)?;
        g.backward(root, &mut analytic);
    }
    let eval = |p: &Params| -> Result<f64> {
        let mut g = Graph::new(p);
        let root = loss(&mut g, p)?;
        Ok(g.scalar(root))
    };
    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for t in 0..params.len() {
        for k in 0..params.tensors()[t].len() {
            let x = params.tensors()[t].values()[k];
            work.tensors_mut()[t].values_mut()[k] = x + epsilon;
            let up = eval(&work)?;
            work.tensors_mut()[t].values_mut()[k] = x - epsilon;
            let down = eval(&work)?;
            work.tensors_mut()[t].values_mut()[k] = x;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(analytic[t][k], numeric));
        }
    }
    Ok(worst)
}

/// Checks the BCE loss of `example` on a model of `config`, seeded by
/// `config.seed`. Parameters use the unit-scale init so gradients stay well
/// above the finite-difference noise floor.
pub fn grad_check(config: &ModelConfig, example: &Example, epsilon: f64) -> Result<f64> {
    let params = init_params_conditioned(config)?;
    let label = if example.label { 1.0 } else { 0.0 };
    grad_check_params(&params, epsilon, |g, p| {
        let prob = example_graph(g, p, config, example.q, &example.s)?;
        Ok(g.bce(prob, label))
    })
}

/// A downsized model and example for checking `kind` at `seed`: three
/// English and three foreign tokens, a two-token sentence. The
/// cross-encoder keeps the toy 2 layers x 32 dims x 2 heads.
pub fn probe(kind: ModelKind, seed: u64) -> (ModelConfig, Example) {
    let mut config = ModelConfig::toy(kind, 3, 3, seed);
    config.max_seq_len = 6;
    if kind == ModelKind::CrossEncoder {
        config.ffn_dim = 16;
    } else {
        config.embed_dim = 8;
        config.ffn_dim = 8;
    }
    let k = (seed % 3) as usize;
    let example = Example {
        q: NUM_SPECIAL + k,
        s: vec![NUM_SPECIAL + 3 + k, NUM_SPECIAL + 4],
        label: seed % 2 == 0,
    };
    (config, example)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    #[test]
    fn affine_sigmoid_model_is_exact() {
        let params = Params::from_named(vec![
            ("w".into(), Tensor::new(vec![3, 1], vec![0.4, -0.3, 0.8]).unwrap()),
            ("b".into(), Tensor::new(vec![1], vec![0.1]).unwrap()),
        ])
        .unwrap();
        let err = grad_check_params(&params, 1e-5, |g, _| {
            let x = g.input(1, 3, vec![0.5, -1.5, 2.0]);
            let w = g.param(1);
            let b = g.param(0);
            let z = g.matmul(x, w);
            let z = g.add_row(z, b);
            let p = g.sigmoid(z);
            Ok(g.bce(p, 1.0))
        })
        .unwrap();
        assert!(err <= 1e-7, "{err}");
    }

    #[test]
    fn small_cross_encoder() {
        let mut c = ModelConfig::toy(ModelKind::CrossEncoder, 3, 3, 4);
        c.embed_dim = 16;
        c.ffn_dim = 16;
        c.max_seq_len = 8;
        let ex = Example { q: 5, s: vec![8, 9, 7], label: true };
        let err = grad_check(&c, &ex, 1e-5).unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn probes_pass() {
        for kind in ModelKind::ALL {
            let (c, ex) = probe(kind, 1);
            let err = grad_check(&c, &ex, 1e-5).unwrap();
            assert!(err <= 1e-4, "{kind}: {err}");
        }
    }

    #[test]
    fn epsilon_must_be_positive() {
        let c = ModelConfig::toy(ModelKind::DotProduct, 2, 2, 0);
        let ex = Example { q: 4, s: vec![6], label: false };
        assert!(grad_check(&c, &ex, 0.0).is_err());
        assert!(grad_check(&c, &ex, -1.0).is_err());
    }
}
