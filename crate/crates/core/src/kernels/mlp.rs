//! Fixed random feed-forward networks with input-gradient backpropagation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Hidden-layer nonlinearity of the random networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let bias = (0..out_dim)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(
            |(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b,
        ));
    }
}

/// A multilayer perceptron whose weights are drawn once and never trained.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Per-layer outputs kept for the backward pass. `values[0]` is the input.
#[derive(Debug, Default, Clone)]
pub(crate) struct Tape {
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub(crate) fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    pub(crate) fn random<R: Rng + ?Sized>(
        in_dim: usize,
        widths: &[usize],
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut dims = Vec::with_capacity(widths.len() + 2);
        dims.push(in_dim);
        dims.extend_from_slice(widths);
        dims.push(out_dim);
        let layers = dims
            .windows(2)
            .map(|w| Layer::random(w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    /// Runs the network on `input`, recording every layer output on `tape`.
    pub(crate) fn forward(&self, input: &[f64], tape: &mut Tape) {
        let n = self.layers.len();
        tape.values.resize_with(n + 1, Vec::new);
        tape.values[0].clear();
        tape.values[0].extend_from_slice(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = tape.values.split_at_mut(l + 1);
            let out = &mut rest[0];
            layer.affine(&done[l], out);
            if l + 1 < n {
                for v in out.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
        }
    }

    /// Vector-Jacobian product with respect to the first `n_inputs` inputs,
    /// accumulated into `grad_in`.
    pub(crate) fn backward_inputs(
        &self,
        tape: &Tape,
        grad_out: &[f64],
        n_inputs: usize,
        grad_in: &mut [f64],
    ) {
        let mut g = grad_out.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if l + 1 < self.layers.len() {
                // g currently holds d/d(post-activation) of layer l.
                for (gi, a) in g.iter_mut().zip(&tape.values[l + 1]) {
                    *gi *= self.activation.derivative_from_output(*a);
                }
            }
            if l == 0 {
                for (o, row) in layer.weights.chunks_exact(layer.in_dim).enumerate() {
                    let go = g[o];
                    for (gi, w) in grad_in.iter_mut().zip(&row[..n_inputs]) {
                        *gi += w * go;
                    }
                }
            } else {
                next.clear();
                next.resize(layer.in_dim, 0.0);
                for (o, row) in layer.weights.chunks_exact(layer.in_dim).enumerate() {
                    let go = g[o];
                    for (ni, w) in next.iter_mut().zip(row) {
                        *ni += w * go;
                    }
                }
                std::mem::swap(&mut g, &mut next);
            }
        }
        debug_assert_eq!(self.layers.first().map(|l| l.out_dim), Some(g.len()));
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn scalar_out(net: &Mlp, input: &[f64], weights: &[f64]) -> f64 {
        let mut tape = Tape::default();
        net.forward(input, &mut tape);
        tape.output().iter().zip(weights).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Relu] {
            let mut rng = rng_from_seed(3);
            let net = Mlp::random(5, &[7, 6], 3, act, &mut rng);
            let input = [0.3, -0.7, 1.1, 0.05, -0.4];
            let w = [0.5, -1.0, 2.0];
            let mut tape = Tape::default();
            net.forward(&input, &mut tape);
            let mut grad = vec![0.0; 3];
            net.backward_inputs(&tape, &w, 3, &mut grad);
            for i in 0..3 {
                let h = 1e-6;
                let mut p = input;
                let mut m = input;
                p[i] += h;
                m[i] -= h;
                let fd = (scalar_out(&net, &p, &w) - scalar_out(&net, &m, &w)) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-6, "{act:?} {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.3) + sigmoid(-0.3) - 1.0).abs() < 1e-15);
    }
}
