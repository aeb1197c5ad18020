//! Dense layers over spans of the flat parameter array, with hand-written
//! reverse mode. Weights are row-major `[out][in]`.

use super::params::Span;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Linear => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Layer {
    pub w: Span,
    pub b: Span,
    pub in_dim: usize,
    pub out_dim: usize,
    pub act: Activation,
}

/// A chain of layers; `in -> width -> ... -> out` with `layers - 1` hidden
/// activations of `hidden_act` and `out_act` on the final layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Post-activation buffers, one per layer, reused across samples.
#[derive(Clone, Debug, Default)]
pub struct MlpActs {
    pub acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn forward(&self, values: &[f64], input: &[f64], acts: &mut MlpActs) {
        debug_assert_eq!(input.len(), self.in_dim);
        acts.acts.resize(self.layers.len(), Vec::new());
        for (li, layer) in self.layers.iter().enumerate() {
            let (before, rest) = acts.acts.split_at_mut(li);
            let out = &mut rest[0];
            out.clear();
            out.resize(layer.out_dim, 0.0);
            let w = layer.w.slice(values);
            let b = layer.b.slice(values);
            let x = if li == 0 { input } else { &before[li - 1] };
            for o in 0..layer.out_dim {
                let row = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    z += wi * xi;
                }
                out[o] = layer.act.apply(z);
            }
        }
    }

    /// Accumulates weight/bias grads into `grads` and writes the gradient
    /// w.r.t. the MLP input into `grad_input` (overwritten, not accumulated).
    pub fn backward(
        &self,
        values: &[f64],
        input: &[f64],
        acts: &MlpActs,
        upstream: &[f64],
        grads: &mut [f64],
        grad_input: &mut Vec<f64>,
        scratch: &mut Vec<f64>,
    ) {
        debug_assert_eq!(upstream.len(), self.out_dim);
        // dz for the current layer, then reused for the next one down.
        let mut dz: Vec<f64> = std::mem::take(scratch);
        dz.clear();
        dz.extend_from_slice(upstream);
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let a = &acts.acts[li];
            for (d, ai) in dz.iter_mut().zip(a.iter()) {
                *d *= layer.act.grad_from_output(*ai);
            }
            let x: &[f64] = if li == 0 { input } else { &acts.acts[li - 1] };
            {
                let gw = layer.w.slice_mut(grads);
                for (o, d) in dz.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (gwi, xi) in row.iter_mut().zip(x.iter()) {
                        *gwi += d * xi;
                    }
                }
            }
            {
                let gb = layer.b.slice_mut(grads);
                for (gbo, d) in gb.iter_mut().zip(dz.iter()) {
                    *gbo += d;
                }
            }
            // Gradient w.r.t. this layer's input.
            grad_input.clear();
            grad_input.resize(layer.in_dim, 0.0);
            let w = layer.w.slice(values);
            for (o, d) in dz.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gi, wi) in grad_input.iter_mut().zip(row.iter()) {
                    *gi += d * wi;
                }
            }
            if li > 0 {
                std::mem::swap(&mut dz, grad_input);
            }
        }
        *scratch = dz;
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len + l.b.len).sum()
    }
}

/// Builds layer dims for `in -> width x (layers-1) -> out`.
pub fn layer_dims(in_dim: usize, layers: usize, width: usize, out_dim: usize) -> Vec<(usize, usize)> {
    assert!(layers >= 1);
    let mut dims = Vec::with_capacity(layers);
    let mut prev = in_dim;
    for _ in 0..layers - 1 {
        dims.push((prev, width));
        prev = width;
    }
    dims.push((prev, out_dim));
    dims
}
