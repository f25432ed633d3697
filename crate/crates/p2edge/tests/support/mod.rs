//! Shared test support: an independent f64 reference implementation of the
//! forward pass and losses, used as the finite-difference oracle. It reads
//! model parameters but deliberately reimplements all computation.

use p2edge::nn::{Activation, LossKind, Model};
use p2edge::Tensor;

/// Plain-f64 copy of a model's parameters.
pub struct RefNet {
    pub layers: Vec<RefLayer>,
}

pub struct RefLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl RefNet {
    pub fn from_model(model: &Model) -> Self {
        RefNet {
            layers: model
                .layers
                .iter()
                .map(|l| RefLayer {
                    in_dim: l.spec.in_dim,
                    out_dim: l.spec.out_dim,
                    activation: l.spec.activation,
                    weights: l.weights.data().iter().map(|w| *w as f64).collect(),
                    biases: l.biases.data().iter().map(|b| *b as f64).collect(),
                })
                .collect(),
        }
    }

    /// Naive forward pass for one sample.
    pub fn forward_sample(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = vec![0.0f64; layer.out_dim];
            for o in 0..layer.out_dim {
                let mut acc = layer.biases[o];
                for i in 0..layer.in_dim {
                    acc += layer.weights[o * layer.in_dim + i] * x[i];
                }
                z[o] = acc;
            }
            x = match layer.activation {
                Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
                Activation::Identity => z,
                Activation::SoftmaxOutput => {
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    exps.iter().map(|e| e / sum).collect()
                }
            };
        }
        x
    }

    /// Batch loss matching the library's definitions (CE clips at 1e-12 and
    /// averages over the batch; MSE/MAE average over all elements).
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>], kind: LossKind) -> f64 {
        let batch = inputs.len();
        let classes = targets[0].len();
        let mut acc = 0.0f64;
        for (x, y) in inputs.iter().zip(targets) {
            let p = self.forward_sample(x);
            match kind {
                LossKind::CategoricalCrossentropy => {
                    for (pi, yi) in p.iter().zip(y) {
                        if *yi != 0.0 {
                            acc -= yi * pi.clamp(1e-12, 1.0).ln();
                        }
                    }
                }
                LossKind::MeanSquaredError => {
                    for (pi, yi) in p.iter().zip(y) {
                        acc += (pi - yi) * (pi - yi);
                    }
                }
                LossKind::MeanAbsoluteError => {
                    for (pi, yi) in p.iter().zip(y) {
                        acc += (pi - yi).abs();
                    }
                }
            }
        }
        match kind {
            LossKind::CategoricalCrossentropy => acc / batch as f64,
            _ => acc / (batch * classes) as f64,
        }
    }
}

impl RefNet {
    /// Smallest |pre-activation| over all ReLU units and samples. Finite
    /// differences are only valid away from the ReLU kink, so gradcheck
    /// batches must keep this margin above the step size.
    pub fn min_relu_margin(&self, inputs: &[Vec<f64>]) -> f64 {
        let mut margin = f64::INFINITY;
        for input in inputs {
            let mut x = input.clone();
            for layer in &self.layers {
                let mut z = vec![0.0f64; layer.out_dim];
                for o in 0..layer.out_dim {
                    let mut acc = layer.biases[o];
                    for i in 0..layer.in_dim {
                        acc += layer.weights[o * layer.in_dim + i] * x[i];
                    }
                    z[o] = acc;
                }
                if layer.activation == Activation::Relu {
                    for v in &z {
                        margin = margin.min(v.abs());
                    }
                }
                x = match layer.activation {
                    Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
                    Activation::Identity => z,
                    Activation::SoftmaxOutput => {
                        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        exps.iter().map(|e| e / sum).collect()
                    }
                };
            }
        }
        margin
    }
}

pub fn rows_to_f64(t: &Tensor) -> Vec<Vec<f64>> {
    let (batch, _) = t.dims2().unwrap();
    (0..batch)
        .map(|r| t.row(r).iter().map(|v| *v as f64).collect())
        .collect()
}

/// Central finite differences of the reference loss with respect to every
/// parameter, in layer order: `(d_weights, d_biases)` per layer.
pub fn fd_gradients(
    model: &Model,
    inputs: &Tensor,
    targets: &Tensor,
    kind: LossKind,
    h: f64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut net = RefNet::from_model(model);
    let x = rows_to_f64(inputs);
    let y = rows_to_f64(targets);
    let mut grads = Vec::with_capacity(net.layers.len());
    for l in 0..net.layers.len() {
        let n_w = net.layers[l].weights.len();
        let n_b = net.layers[l].biases.len();
        let mut dw = vec![0.0f64; n_w];
        let mut db = vec![0.0f64; n_b];
        for p in 0..n_w {
            let orig = net.layers[l].weights[p];
            net.layers[l].weights[p] = orig + h;
            let plus = net.loss(&x, &y, kind);
            net.layers[l].weights[p] = orig - h;
            let minus = net.loss(&x, &y, kind);
            net.layers[l].weights[p] = orig;
            dw[p] = (plus - minus) / (2.0 * h);
        }
        for p in 0..n_b {
            let orig = net.layers[l].biases[p];
            net.layers[l].biases[p] = orig + h;
            let plus = net.loss(&x, &y, kind);
            net.layers[l].biases[p] = orig - h;
            let minus = net.loss(&x, &y, kind);
            net.layers[l].biases[p] = orig;
            db[p] = (plus - minus) / (2.0 * h);
        }
        grads.push((dw, db));
    }
    grads
}

/// Relative-error check with an absolute floor: passes when
/// `|a - b| <= floor` or `|a - b| / max(|a|, |b|) <= rel`.
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    let diff = (a - b).abs();
    diff <= floor || diff / a.abs().max(b.abs()) <= rel
}

/// Worst relative error (with floor) between backprop and the oracle.
pub fn max_gradient_error(
    model: &Model,
    analytic: &p2edge::nn::Gradients,
    numeric: &[(Vec<f64>, Vec<f64>)],
    rel: f64,
    floor: f64,
) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    for (l, (dw, db)) in analytic.layers.iter().enumerate() {
        for (i, &g) in dw.data().iter().enumerate() {
            let fd = numeric[l].0[i];
            let diff = (g as f64 - fd).abs();
            if diff > floor {
                let rel_err = diff / (g as f64).abs().max(fd.abs());
                worst = worst.max(rel_err);
                if rel_err > rel {
                    failures += 1;
                }
            }
        }
        for (i, &g) in db.data().iter().enumerate() {
            let fd = numeric[l].1[i];
            let diff = (g as f64 - fd).abs();
            if diff > floor {
                let rel_err = diff / (g as f64).abs().max(fd.abs());
                worst = worst.max(rel_err);
                if rel_err > rel {
                    failures += 1;
                }
            }
        }
    }
    let _ = model;
    (worst, failures)
}
