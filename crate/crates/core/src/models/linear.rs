//! Linear autoregressive baseline: a dot product of the flattened window
//! with `ar.w` `[1, W·F]` plus the scalar `ar.b`.

use rand::Rng;

use super::xavier_uniform;
use crate::error::Result;
use crate::params::{LayerParams, ParameterSet};

pub(super) fn init(inputs: usize, rng: &mut impl Rng) -> Result<ParameterSet> {
    ParameterSet::new(vec![
        LayerParams::new(
            "ar.w",
            vec![1, inputs],
            xavier_uniform(rng, inputs, 1, inputs),
        )?,
        LayerParams::zeros("ar.b", vec![1])?,
    ])
}

pub(super) fn forward(params: &ParameterSet, input: &[f64]) -> f64 {
    let w = params.layers()[0].values();
    let b = params.layers()[1].values()[0];
    w.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b
}

pub(super) fn loss_and_grad(
    params: &ParameterSet,
    input: &[f64],
    target: f64,
    scale: f64,
    grad: &mut ParameterSet,
) -> f64 {
    let err = forward(params, input) - target;
    let dy = 2.0 * err * scale;
    let layers = grad.layers_mut();
    for (g, x) in layers[0].values_mut().iter_mut().zip(input) {
        *g += dy * x;
    }
    layers[1].values_mut()[0] += dy;
    err * err
}
