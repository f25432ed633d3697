//! Layered dense model and its forward pass.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::HyperParams;
use crate::quant::{QuantParams, QuantizedTensor};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    /// Row-wise softmax; only valid on the final layer.
    SoftmaxOutput,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// One dense layer: weights are `out_dim x in_dim`, biases `out_dim`.
///
/// `mask`, when present, is a binary tensor of the weight shape; a zero mask
/// entry pins the corresponding weight to exactly zero. `qweights` holds the
/// int8 image of the weights after post-training quantization; the `weights`
/// tensor then stores its dequantized value so the float forward path stays
/// the single source of truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Tensor,
    pub biases: Tensor,
    pub mask: Option<Tensor>,
    pub qweights: Option<QuantizedTensor>,
}

/// Training provenance carried by a model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparams: Option<HyperParams>,
    /// Achieved sparsity per weight tensor, in layer order.
    #[serde(default)]
    pub sparsity: Vec<f32>,
    /// Accuracy on the pruning split, when measured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f32>,
    /// Activation quantization parameters: entry 0 covers the model input,
    /// entry i+1 the output of layer i. Recorded by calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_quant: Option<Vec<QuantParams>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub metadata: ModelMetadata,
}

impl Model {
    /// Builds a model with uniform Xavier initialization from a seeded PRNG.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|spec| {
                let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
                let data: Vec<f32> = (0..spec.in_dim * spec.out_dim)
                    .map(|_| rng.gen_range(-limit..=limit) as f32)
                    .collect();
                Layer {
                    spec: *spec,
                    weights: Tensor::new(vec![spec.out_dim, spec.in_dim], data)
                        .expect("weight shape matches generated data"),
                    biases: Tensor::zeros(vec![spec.out_dim]),
                    mask: None,
                    qweights: None,
                }
            })
            .collect();
        Ok(Self {
            layers,
            metadata: ModelMetadata::default(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn is_quantized(&self) -> bool {
        self.layers.iter().all(|l| l.qweights.is_some())
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Checks the structural invariants: chained dims, binary masks that
    /// agree with zeroed weights, finite parameters.
    pub fn validate(&self) -> Result<()> {
        validate_specs(&self.specs())?;
        for (i, layer) in self.layers.iter().enumerate() {
            let (o, n) = layer.weights.dims2()?;
            if o != layer.spec.out_dim || n != layer.spec.in_dim {
                return Err(Error::Shape(format!(
                    "layer {i}: weight tensor {o}x{n} does not match spec {}x{}",
                    layer.spec.out_dim, layer.spec.in_dim
                )));
            }
            if layer.biases.numel() != layer.spec.out_dim {
                return Err(Error::Shape(format!("layer {i}: bias length mismatch")));
            }
            if !layer.weights.is_finite() || !layer.biases.is_finite() {
                return Err(Error::Numeric(format!("layer {i}: non-finite parameter")));
            }
            if let Some(mask) = &layer.mask {
                if mask.shape() != layer.weights.shape() {
                    return Err(Error::Shape(format!("layer {i}: mask shape mismatch")));
                }
                for (j, (&m, &w)) in mask.data().iter().zip(layer.weights.data()).enumerate() {
                    if m != 0.0 && m != 1.0 {
                        return Err(Error::Corrupt(format!(
                            "layer {i}: mask entry {j} is {m}, expected 0 or 1"
                        )));
                    }
                    if m == 0.0 && w != 0.0 {
                        return Err(Error::Corrupt(format!(
                            "layer {i}: weight {j} is {w} under a zero mask"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Batched forward pass. `inputs` is `batch x in_dim`; the result is
    /// `batch x n_classes`. With a softmax output layer every result row is a
    /// probability vector.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        let cache = forward_cached(self, inputs)?;
        Ok(cache.into_iter().last().expect("cache has one entry per layer"))
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("model needs at least one layer".into()));
    }
    for (i, spec) in specs.iter().enumerate() {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::Config(format!("layer {i}: zero dimension")));
        }
        if spec.activation == Activation::SoftmaxOutput && i + 1 != specs.len() {
            return Err(Error::Config(format!(
                "layer {i}: softmax-output is only valid on the final layer"
            )));
        }
    }
    for i in 1..specs.len() {
        if specs[i - 1].out_dim != specs[i].in_dim {
            return Err(Error::Shape(format!(
                "layer {} out_dim {} does not chain into layer {} in_dim {}",
                i - 1,
                specs[i - 1].out_dim,
                i,
                specs[i].in_dim
            )));
        }
    }
    Ok(())
}

/// Forward pass keeping every post-activation tensor: entry 0 is the input,
/// entry i+1 the output of layer i. Backprop consumes this cache.
pub(crate) fn forward_cached(model: &Model, inputs: &Tensor) -> Result<Vec<Tensor>> {
    let (batch, width) = inputs.dims2()?;
    if width != model.in_dim() {
        return Err(Error::Shape(format!(
            "input width {width} does not match model in_dim {}",
            model.in_dim()
        )));
    }
    if !inputs.is_finite() {
        return Err(Error::Numeric("non-finite input".into()));
    }

    let mut cache = Vec::with_capacity(model.layers.len() + 1);
    cache.push(inputs.clone());
    for layer in &model.layers {
        let prev = cache.last().expect("cache is non-empty");
        let out = layer_forward(layer, prev, batch);
        cache.push(out);
    }
    // Drop the input clone: callers index from the input, so keep it.
    Ok(cache)
}

fn layer_forward(layer: &Layer, inputs: &Tensor, batch: usize) -> Tensor {
    let in_dim = layer.spec.in_dim;
    let out_dim = layer.spec.out_dim;
    let w = layer.weights.data();
    let b = layer.biases.data();
    let mut out = vec![0.0f32; batch * out_dim];

    for r in 0..batch {
        let x = inputs.row(r);
        let mut z = vec![0.0f64; out_dim];
        for (o, z_o) in z.iter_mut().enumerate() {
            let mut acc = b[o] as f64;
            let row = &w[o * in_dim..(o + 1) * in_dim];
            for (wi, xi) in row.iter().zip(x) {
                acc += *wi as f64 * *xi as f64;
            }
            *z_o = acc;
        }
        let dst = &mut out[r * out_dim..(r + 1) * out_dim];
        match layer.spec.activation {
            Activation::Relu => {
                for (d, z_o) in dst.iter_mut().zip(&z) {
                    *d = z_o.max(0.0) as f32;
                }
            }
            Activation::Identity => {
                for (d, z_o) in dst.iter_mut().zip(&z) {
                    *d = *z_o as f32;
                }
            }
            Activation::SoftmaxOutput => {
                softmax_row(&z, dst);
            }
        }
    }
    Tensor::new(vec![batch, out_dim], out).expect("forward output shape is consistent")
}

/// Numerically stable softmax: subtracts the row max before exponentiation.
fn softmax_row(z: &[f64], dst: &mut [f32]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0f64;
    let mut exps = vec![0.0f64; z.len()];
    for (e, z_o) in exps.iter_mut().zip(z) {
        *e = (z_o - max).exp();
        sum += *e;
    }
    for (d, e) in dst.iter_mut().zip(&exps) {
        *d = (e / sum) as f32;
    }
}
