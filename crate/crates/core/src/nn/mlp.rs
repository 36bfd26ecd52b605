//! Fully connected networks with GELU hidden activations and a linear output.

use super::layout::{Dense, ParamLayout};
use super::tape::{Tape, Var};
use crate::error::{LgsError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`mlp_forward`] for [`mlp_backward`].
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input to every layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Vec<f64>>,
    out_len: usize,
}

impl Mlp {
    /// Allocate layers for `sizes = [in, hidden.., out]`.
    pub fn new(layout: &mut ParamLayout, name: &str, sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| layout.dense(&format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    /// A standalone MLP whose parameters start at offset 0.
    pub fn contiguous(sizes: &[usize]) -> (Self, ParamLayout) {
        let mut layout = ParamLayout::new();
        let mlp = Self::new(&mut layout, "mlp", sizes);
        (mlp, layout)
    }

    pub fn in_len(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn arch(&self) -> Vec<usize> {
        let mut a = vec![self.in_len()];
        a.extend(self.layers.iter().map(|l| l.fan_out));
        a
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = tape.linear(h, l.w, Some(l.b), l.fan_out, l.fan_in);
            if i + 1 < self.layers.len() {
                h = tape.gelu(h);
            }
        }
        h
    }
}

fn dense_apply(params: &[f64], l: &Dense, x: &[f64]) -> Vec<f64> {
    let w = &params[l.w..l.w + l.fan_in * l.fan_out];
    w.chunks_exact(l.fan_in)
        .zip(&params[l.b..l.b + l.fan_out])
        .map(|(row, b)| b + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn mlp_forward(params: &[f64], mlp: &Mlp, input: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
    if input.len() != mlp.in_len() {
        return Err(LgsError::Shape(format!(
            "MLP input has length {}, architecture expects {}",
            input.len(),
            mlp.in_len()
        )));
    }
    let mut inputs = Vec::with_capacity(mlp.layers.len());
    let mut pre = Vec::with_capacity(mlp.layers.len());
    let mut h = input.to_vec();
    for (i, l) in mlp.layers.iter().enumerate() {
        let z = dense_apply(params, l, &h);
        inputs.push(std::mem::take(&mut h));
        if i + 1 < mlp.layers.len() {
            h = z.iter().map(|&v| gelu(v)).collect();
            pre.push(z);
        } else {
            h = z;
        }
    }
    let out_len = h.len();
    Ok((h, MlpTape { inputs, pre, out_len }))
}

/// Accumulates `d(output . upstream)/d(params)` into `grads` and returns the
/// gradient with respect to the input.
pub fn mlp_backward(
    params: &[f64],
    mlp: &Mlp,
    tape: &MlpTape,
    upstream: &[f64],
    grads: &mut [f64],
) -> Result<Vec<f64>> {
    if upstream.len() != tape.out_len || tape.inputs.len() != mlp.layers.len() {
        return Err(LgsError::Shape(format!(
            "upstream has length {}, tape output has {}",
            upstream.len(),
            tape.out_len
        )));
    }
    let mut g = upstream.to_vec();
    for (i, l) in mlp.layers.iter().enumerate().rev() {
        if i + 1 < mlp.layers.len() {
            for (gi, z) in g.iter_mut().zip(&tape.pre[i]) {
                *gi *= gelu_grad(*z);
            }
        }
        let x = &tape.inputs[i];
        for (r, gr) in g.iter().enumerate() {
            let row = &mut grads[l.w + r * l.fan_in..l.w + (r + 1) * l.fan_in];
            for (gw, xv) in row.iter_mut().zip(x) {
                *gw += gr * xv;
            }
            grads[l.b + r] += gr;
        }
        let w = &params[l.w..l.w + l.fan_in * l.fan_out];
        let mut gx = vec![0.0; l.fan_in];
        for (row, gr) in w.chunks_exact(l.fan_in).zip(&g) {
            for (gxj, wv) in gx.iter_mut().zip(row) {
                *gxj += gr * wv;
            }
        }
        g = gx;
    }
    Ok(g)
}
