//! Two-layer LSTM regressor with a dense readout, trained by full-window
//! backpropagation through time.
//!
//! Parameter layout per recurrent layer `n` (gate order input, forget,
//! candidate, output):
//!
//! - `lstm{n}.w_ih` `[4H, I]`
//! - `lstm{n}.w_hh` `[4H, H]`
//! - `lstm{n}.b`    `[4H]`
//!
//! followed by `fc.w` `[1, H]` and `fc.b` `[1]`.

use rand::Rng;

use super::{sigmoid, xavier_uniform};
use crate::error::Result;
use crate::params::{LayerParams, ParameterSet};

/// Number of entries per recurrent layer in the parameter set.
const ENTRIES_PER_LAYER: usize = 3;

pub(super) fn init(input: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<ParameterSet> {
    let mut layers = Vec::new();
    let mut fan_in = input;
    for (n, &h) in hidden.iter().enumerate() {
        let name = format!("lstm{}", n + 1);
        layers.push(LayerParams::new(
            format!("{name}.w_ih"),
            vec![4 * h, fan_in],
            xavier_uniform(rng, fan_in, h, 4 * h * fan_in),
        )?);
        layers.push(LayerParams::new(
            format!("{name}.w_hh"),
            vec![4 * h, h],
            xavier_uniform(rng, h, h, 4 * h * h),
        )?);
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        layers.push(LayerParams::new(format!("{name}.b"), vec![4 * h], bias)?);
        fan_in = h;
    }
    layers.push(LayerParams::new(
        "fc.w",
        vec![1, fan_in],
        xavier_uniform(rng, fan_in, 1, fan_in),
    )?);
    layers.push(LayerParams::zeros("fc.b", vec![1])?);
    ParameterSet::new(layers)
}

/// Activations of one recurrent layer over the whole window.
struct LayerTrace {
    hidden: usize,
    /// Gate activations `[i, f, g, o]` per step, each `4H` long.
    gates: Vec<Vec<f64>>,
    /// Cell state per step.
    cells: Vec<Vec<f64>>,
    /// Hidden state per step.
    outputs: Vec<Vec<f64>>,
}

fn layer_forward(
    w_ih: &[f64],
    w_hh: &[f64],
    bias: &[f64],
    hidden: usize,
    inputs: &[Vec<f64>],
) -> LayerTrace {
    let h4 = 4 * hidden;
    let in_dim = inputs.first().map_or(0, Vec::len);
    let steps = inputs.len();
    let mut trace = LayerTrace {
        hidden,
        gates: Vec::with_capacity(steps),
        cells: Vec::with_capacity(steps),
        outputs: Vec::with_capacity(steps),
    };
    let zeros = vec![0.0; hidden];
    for x in inputs {
        let h_prev = trace.outputs.last().unwrap_or(&zeros);
        let c_prev = trace.cells.last().unwrap_or(&zeros);
        let mut z = bias.to_vec();
        for (r, zr) in z.iter_mut().enumerate().take(h4) {
            let row_ih = &w_ih[r * in_dim..(r + 1) * in_dim];
            let row_hh = &w_hh[r * hidden..(r + 1) * hidden];
            *zr += dot(row_ih, x) + dot(row_hh, h_prev);
        }
        let mut c = vec![0.0; hidden];
        let mut h = vec![0.0; hidden];
        for j in 0..hidden {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[hidden + j]);
            let g = z[2 * hidden + j].tanh();
            let o = sigmoid(z[3 * hidden + j]);
            z[j] = i;
            z[hidden + j] = f;
            z[2 * hidden + j] = g;
            z[3 * hidden + j] = o;
            c[j] = f * c_prev[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        trace.gates.push(z);
        trace.cells.push(c);
        trace.outputs.push(h);
    }
    trace
}

/// Backward pass of one recurrent layer. `d_outputs[t]` is the loss
/// gradient flowing into `h_t` from above. Accumulates into the three
/// gradient slices and returns the gradient with respect to each input.
#[allow(clippy::too_many_arguments)]
fn layer_backward(
    w_ih: &[f64],
    w_hh: &[f64],
    inputs: &[Vec<f64>],
    trace: &LayerTrace,
    d_outputs: &[Vec<f64>],
    g_ih: &mut [f64],
    g_hh: &mut [f64],
    g_b: &mut [f64],
) -> Vec<Vec<f64>> {
    let hidden = trace.hidden;
    let h4 = 4 * hidden;
    let in_dim = inputs.first().map_or(0, Vec::len);
    let steps = inputs.len();
    let zeros = vec![0.0; hidden];
    let mut d_inputs = vec![vec![0.0; in_dim]; steps];
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dz = vec![0.0; h4];
    for t in (0..steps).rev() {
        let gates = &trace.gates[t];
        let c = &trace.cells[t];
        let c_prev = if t > 0 { &trace.cells[t - 1] } else { &zeros };
        let h_prev = if t > 0 { &trace.outputs[t - 1] } else { &zeros };
        for j in 0..hidden {
            let (i, f, g, o) = (
                gates[j],
                gates[hidden + j],
                gates[2 * hidden + j],
                gates[3 * hidden + j],
            );
            let dh = d_outputs[t][j] + dh_next[j];
            let tc = c[j].tanh();
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dz[j] = dc * g * i * (1.0 - i);
            dz[hidden + j] = dc * c_prev[j] * f * (1.0 - f);
            dz[2 * hidden + j] = dc * i * (1.0 - g * g);
            dz[3 * hidden + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let x = &inputs[t];
        for r in 0..h4 {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            g_b[r] += d;
            let row_ih = r * in_dim;
            for (k, xk) in x.iter().enumerate() {
                g_ih[row_ih + k] += d * xk;
                d_inputs[t][k] += d * w_ih[row_ih + k];
            }
            let row_hh = r * hidden;
            for k in 0..hidden {
                g_hh[row_hh + k] += d * h_prev[k];
                dh_next[k] += d * w_hh[row_hh + k];
            }
        }
    }
    d_inputs
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn split_steps(input: &[f64], window: usize) -> Vec<Vec<f64>> {
    let dim = input.len() / window;
    input.chunks(dim).map(<[f64]>::to_vec).collect()
}

fn recurrent_layers(params: &ParameterSet) -> usize {
    (params.num_layers() - 2) / ENTRIES_PER_LAYER
}

pub(super) fn forward(params: &ParameterSet, input: &[f64], window: usize) -> f64 {
    let layers = params.layers();
    let mut seq = split_steps(input, window);
    for n in 0..recurrent_layers(params) {
        let base = n * ENTRIES_PER_LAYER;
        let hidden = layers[base + 1].shape()[1];
        let trace = layer_forward(
            layers[base].values(),
            layers[base + 1].values(),
            layers[base + 2].values(),
            hidden,
            &seq,
        );
        seq = trace.outputs;
    }
    let fc_w = layers[layers.len() - 2].values();
    let fc_b = layers[layers.len() - 1].values()[0];
    dot(fc_w, seq.last().expect("window has at least one step")) + fc_b
}

/// Squared-error loss of one example; accumulates its gradient into `grad`.
pub(super) fn loss_and_grad(
    params: &ParameterSet,
    input: &[f64],
    window: usize,
    target: f64,
    scale: f64,
    grad: &mut ParameterSet,
) -> f64 {
    let layers = params.layers();
    let depth = recurrent_layers(params);
    let mut inputs = vec![split_steps(input, window)];
    let mut traces = Vec::with_capacity(depth);
    for n in 0..depth {
        let base = n * ENTRIES_PER_LAYER;
        let hidden = layers[base + 1].shape()[1];
        let trace = layer_forward(
            layers[base].values(),
            layers[base + 1].values(),
            layers[base + 2].values(),
            hidden,
            &inputs[n],
        );
        inputs.push(trace.outputs.clone());
        traces.push(trace);
    }
    let top = inputs[depth].last().expect("window has at least one step");
    let fc = layers.len() - 2;
    let pred = dot(layers[fc].values(), top) + layers[fc + 1].values()[0];
    let err = pred - target;
    let dy = 2.0 * err * scale;

    let grads = grad.layers_mut();
    for (g, h) in grads[fc].values_mut().iter_mut().zip(top) {
        *g += dy * h;
    }
    grads[fc + 1].values_mut()[0] += dy;

    let steps = inputs[0].len();
    let top_hidden = top.len();
    let mut d_out = vec![vec![0.0; top_hidden]; steps];
    for (d, w) in d_out[steps - 1].iter_mut().zip(layers[fc].values()) {
        *d = dy * w;
    }
    for n in (0..depth).rev() {
        let base = n * ENTRIES_PER_LAYER;
        let (head, tail) = grads.split_at_mut(base + 1);
        let (mid, rest) = tail.split_at_mut(1);
        d_out = layer_backward(
            layers[base].values(),
            layers[base + 1].values(),
            &inputs[n],
            &traces[n],
            &d_out,
            head[base].values_mut(),
            mid[0].values_mut(),
            rest[0].values_mut(),
        );
    }
    err * err
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line LSTM recurrence written independently of the layer
    /// code above: explicit per-gate weight rows, no shared buffers.
    fn reference_forward(params: &ParameterSet, steps: &[Vec<f64>]) -> f64 {
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut seq: Vec<Vec<f64>> = steps.to_vec();
        let depth = (params.num_layers() - 2) / 3;
        for n in 1..=depth {
            let w_ih = params.layer(&format!("lstm{n}.w_ih")).unwrap();
            let w_hh = params.layer(&format!("lstm{n}.w_hh")).unwrap();
            let b = params.layer(&format!("lstm{n}.b")).unwrap().values();
            let hsz = w_hh.shape()[1];
            let isz = w_ih.shape()[1];
            let row = |m: &LayerParams, r: usize, cols: usize, v: &[f64]| -> f64 {
                (0..cols)
                    .map(|k| m.values()[r * cols + k] * v[k])
                    .sum::<f64>()
            };
            let mut h = vec![0.0; hsz];
            let mut c = vec![0.0; hsz];
            let mut out = Vec::new();
            for x in &seq {
                let mut nh = vec![0.0; hsz];
                let mut nc = vec![0.0; hsz];
                for j in 0..hsz {
                    let pre = |gate: usize| {
                        let r = gate * hsz + j;
                        row(w_ih, r, isz, x) + row(w_hh, r, hsz, &h) + b[r]
                    };
                    let ig = sig(pre(0));
                    let fg = sig(pre(1));
                    let gg = pre(2).tanh();
                    let og = sig(pre(3));
                    nc[j] = fg * c[j] + ig * gg;
                    nh[j] = og * nc[j].tanh();
                }
                h = nh;
                c = nc;
                out.push(h.clone());
            }
            seq = out;
        }
        let fc_w = params.layer("fc.w").unwrap().values();
        let fc_b = params.layer("fc.b").unwrap().values()[0];
        fc_w.iter()
            .zip(seq.last().unwrap())
            .map(|(w, h)| w * h)
            .sum::<f64>()
            + fc_b
    }

    #[test]
    fn forward_matches_reference_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = init(3, &[5, 4], &mut rng).unwrap();
        let steps: Vec<Vec<f64>> = (0..6)
            .map(|t| (0..3).map(|k| ((t * 3 + k) as f64 * 0.37).sin()).collect())
            .collect();
        let flat: Vec<f64> = steps.concat();
        let got = forward(&params, &flat, 6);
        let want = reference_forward(&params, &steps);
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn layout_and_forget_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = init(3, &[8, 8], &mut rng).unwrap();
        let names: Vec<&str> = params.layers().iter().map(|l| l.name()).collect();
        assert_eq!(
            names,
            [
                "lstm1.w_ih",
                "lstm1.w_hh",
                "lstm1.b",
                "lstm2.w_ih",
                "lstm2.w_hh",
                "lstm2.b",
                "fc.w",
                "fc.b"
            ]
        );
        assert_eq!(params.layer("lstm1.w_ih").unwrap().shape(), &[32, 3]);
        assert_eq!(params.layer("lstm2.w_ih").unwrap().shape(), &[32, 8]);
        assert_eq!(params.layer("fc.w").unwrap().shape(), &[1, 8]);
        let b = params.layer("lstm1.b").unwrap().values();
        assert!(b[8..16].iter().all(|&v| v == 1.0));
        assert!(b[..8].iter().chain(&b[16..]).all(|&v| v == 0.0));
    }
}
