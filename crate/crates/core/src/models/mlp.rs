//! Two fully-connected layers: affine, tanh, affine to class logits.
//! Parameters `fc1.w` `[H, In]`, `fc1.b` `[H]`, `fc2.w` `[C, H]`, `fc2.b` `[C]`.

use rand::Rng;

use super::{log_softmax, xavier_uniform};
use crate::error::Result;
use crate::params::{LayerParams, ParameterSet};

pub(super) fn init(
    inputs: usize,
    hidden: usize,
    classes: usize,
    rng: &mut impl Rng,
) -> Result<ParameterSet> {
    ParameterSet::new(vec![
        LayerParams::new(
            "fc1.w",
            vec![hidden, inputs],
            xavier_uniform(rng, inputs, hidden, hidden * inputs),
        )?,
        LayerParams::zeros("fc1.b", vec![hidden])?,
        LayerParams::new(
            "fc2.w",
            vec![classes, hidden],
            xavier_uniform(rng, hidden, classes, classes * hidden),
        )?,
        LayerParams::zeros("fc2.b", vec![classes])?,
    ])
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, bias)| {
            bias + w[r * cols..(r + 1) * cols]
                .iter()
                .zip(x)
                .map(|(a, v)| a * v)
                .sum::<f64>()
        })
        .collect()
}

fn hidden_and_logits(params: &ParameterSet, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l = params.layers();
    let hidden: Vec<f64> = affine(l[0].values(), l[1].values(), input)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let logits = affine(l[2].values(), l[3].values(), &hidden);
    (hidden, logits)
}

pub(super) fn forward(params: &ParameterSet, input: &[f64]) -> Vec<f64> {
    hidden_and_logits(params, input).1
}

/// Cross-entropy of one example; accumulates its gradient into `grad`.
pub(super) fn loss_and_grad(
    params: &ParameterSet,
    input: &[f64],
    class: usize,
    scale: f64,
    grad: &mut ParameterSet,
) -> f64 {
    let (hidden, logits) = hidden_and_logits(params, input);
    let logp = log_softmax(&logits);
    let loss = -logp[class];
    let dlogits: Vec<f64> = logp
        .iter()
        .enumerate()
        .map(|(c, lp)| scale * (lp.exp() - if c == class { 1.0 } else { 0.0 }))
        .collect();

    let l = params.layers();
    let h = hidden.len();
    let w2 = l[2].values();
    let mut dhidden = vec![0.0; h];
    {
        let g = grad.layers_mut();
        for (c, d) in dlogits.iter().enumerate() {
            g[3].values_mut()[c] += d;
            let row = &mut g[2].values_mut()[c * h..(c + 1) * h];
            for (k, gv) in row.iter_mut().enumerate() {
                *gv += d * hidden[k];
                dhidden[k] += d * w2[c * h + k];
            }
        }
        let n_in = input.len();
        for (k, dh) in dhidden.iter().enumerate() {
            let dz = dh * (1.0 - hidden[k] * hidden[k]);
            g[1].values_mut()[k] += dz;
            let row = &mut g[0].values_mut()[k * n_in..(k + 1) * n_in];
            for (gv, x) in row.iter_mut().zip(input) {
                *gv += dz * x;
            }
        }
    }
    loss
}
