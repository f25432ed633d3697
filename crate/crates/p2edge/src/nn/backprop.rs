//! Reverse-mode gradients for the dense forward pass.
//!
//! Gradients flow through the generic chain dL/dz = J_act^T dL/da, so every
//! loss works with every output activation it is defined for; cross-entropy
//! additionally requires a softmax output layer so that predictions are
//! probability vectors.

use crate::error::{Error, Result};
use crate::nn::loss::{one_hot, CE_CLIP};
use crate::nn::model::{forward_cached, Activation, Model};
use crate::nn::LossKind;
use crate::tensor::Tensor;

/// Per-layer parameter gradients, shape-matched to the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// `(d_weights, d_biases)` in layer order.
    pub layers: Vec<(Tensor, Tensor)>,
}

/// Gradient of the batch loss with respect to every weight and bias.
pub fn backward(
    model: &Model,
    inputs: &Tensor,
    targets: &Tensor,
    kind: LossKind,
) -> Result<Gradients> {
    let final_act = model.layers[model.layers.len() - 1].spec.activation;
    if kind == LossKind::CategoricalCrossentropy && final_act != Activation::SoftmaxOutput {
        return Err(Error::Config(
            "categorical_crossentropy requires a softmax output layer".into(),
        ));
    }
    let cache = forward_cached(model, inputs)?;
    let predictions = &cache[cache.len() - 1];
    if predictions.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "targets {:?} do not match predictions {:?}",
            targets.shape(),
            predictions.shape()
        )));
    }
    let (batch, _) = inputs.dims2()?;

    // dL/da at the output, then walk layers top-down.
    let mut d_act = loss_grad(kind, predictions, targets);
    let mut grads: Vec<(Tensor, Tensor)> = Vec::with_capacity(model.layers.len());

    for (idx, layer) in model.layers.iter().enumerate().rev() {
        let out_dim = layer.spec.out_dim;
        let in_dim = layer.spec.in_dim;
        let activations = &cache[idx + 1];
        let prev = &cache[idx];

        // dL/dz from dL/da through this layer's activation.
        let mut delta = vec![0.0f64; batch * out_dim];
        for r in 0..batch {
            let a = activations.row(r);
            let g = &d_act[r * out_dim..(r + 1) * out_dim];
            let dz = &mut delta[r * out_dim..(r + 1) * out_dim];
            match layer.spec.activation {
                Activation::Identity => dz.copy_from_slice(g),
                Activation::Relu => {
                    for o in 0..out_dim {
                        dz[o] = if a[o] > 0.0 { g[o] } else { 0.0 };
                    }
                }
                Activation::SoftmaxOutput => {
                    // J_softmax^T g = p .* (g - <g, p>)
                    let dot: f64 = g.iter().zip(a).map(|(gi, pi)| gi * *pi as f64).sum();
                    for o in 0..out_dim {
                        dz[o] = a[o] as f64 * (g[o] - dot);
                    }
                }
            }
        }

        let mut dw = vec![0.0f64; out_dim * in_dim];
        let mut db = vec![0.0f64; out_dim];
        let mut d_prev = vec![0.0f64; batch * in_dim];
        let w = layer.weights.data();
        for r in 0..batch {
            let x = prev.row(r);
            let dz = &delta[r * out_dim..(r + 1) * out_dim];
            let dx = &mut d_prev[r * in_dim..(r + 1) * in_dim];
            for o in 0..out_dim {
                db[o] += dz[o];
                let w_row = &w[o * in_dim..(o + 1) * in_dim];
                let dw_row = &mut dw[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    dw_row[i] += dz[o] * x[i] as f64;
                    dx[i] += dz[o] * w_row[i] as f64;
                }
            }
        }

        grads.push((
            Tensor::new(vec![out_dim, in_dim], dw.iter().map(|v| *v as f32).collect())
                .expect("gradient shape matches weights"),
            Tensor::new(vec![out_dim], db.iter().map(|v| *v as f32).collect())
                .expect("gradient shape matches biases"),
        ));
        d_act = d_prev;
    }

    grads.reverse();
    Ok(Gradients { layers: grads })
}

/// dL/dp for a batch, flattened row-major in f64.
pub(crate) fn loss_grad(kind: LossKind, predictions: &Tensor, targets: &Tensor) -> Vec<f64> {
    let (batch, classes) = predictions
        .dims2()
        .expect("predictions are 2-D by construction");
    let p = predictions.data();
    let y = targets.data();
    let mut g = vec![0.0f64; p.len()];
    match kind {
        LossKind::CategoricalCrossentropy => {
            for (i, gi) in g.iter_mut().enumerate() {
                if y[i] != 0.0 {
                    let clipped = (p[i] as f64).clamp(CE_CLIP, 1.0);
                    *gi = -(y[i] as f64) / clipped / batch as f64;
                }
            }
        }
        LossKind::MeanSquaredError => {
            let scale = 2.0 / (batch * classes) as f64;
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = scale * (p[i] as f64 - y[i] as f64);
            }
        }
        LossKind::MeanAbsoluteError => {
            let scale = 1.0 / (batch * classes) as f64;
            for (i, gi) in g.iter_mut().enumerate() {
                let d = p[i] as f64 - y[i] as f64;
                *gi = if d > 0.0 {
                    scale
                } else if d < 0.0 {
                    -scale
                } else {
                    0.0
                };
            }
        }
    }
    g
}

/// Convenience wrapper: one-hot encodes labels before `backward`.
pub fn backward_labels(
    model: &Model,
    inputs: &Tensor,
    labels: &[u16],
    kind: LossKind,
) -> Result<Gradients> {
    let targets = one_hot(labels, model.n_classes());
    backward(model, inputs, &targets, kind)
}
