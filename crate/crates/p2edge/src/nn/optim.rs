//! SGD and Adam parameter updates.

use serde::{Deserialize, Serialize};

use crate::nn::backprop::Gradients;
use crate::nn::model::Model;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
struct LayerMoments {
    m_w: Vec<f32>,
    v_w: Vec<f32>,
    m_b: Vec<f32>,
    v_b: Vec<f32>,
}

#[derive(Debug, Clone)]
struct AdamState {
    step: u64,
    layers: Vec<LayerMoments>,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f32,
    adam: Option<AdamState>,
}

impl OptimizerState {
    /// Moment tensors are allocated to match the model's parameters.
    pub fn new(kind: OptimizerKind, learning_rate: f32, model: &Model) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        let adam = match kind {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam => Some(AdamState {
                step: 0,
                layers: model
                    .layers
                    .iter()
                    .map(|l| LayerMoments {
                        m_w: vec![0.0; l.weights.numel()],
                        v_w: vec![0.0; l.weights.numel()],
                        m_b: vec![0.0; l.biases.numel()],
                        v_b: vec![0.0; l.biases.numel()],
                    })
                    .collect(),
            }),
        };
        Self {
            kind,
            learning_rate,
            adam,
        }
    }

    /// Applies one update in place. SGD is exactly `p -= lr * g`; Adam is the
    /// standard bias-corrected update.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients) {
        assert_eq!(model.layers.len(), grads.layers.len(), "gradient/layer count mismatch");
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, (dw, db)) in model.layers.iter_mut().zip(&grads.layers) {
                    for (w, g) in layer.weights.data_mut().iter_mut().zip(dw.data()) {
                        *w -= lr * g;
                    }
                    for (b, g) in layer.biases.data_mut().iter_mut().zip(db.data()) {
                        *b -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let state = self.adam.as_mut().expect("adam state exists for adam kind");
                state.step += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
                for ((layer, (dw, db)), mom) in model
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut state.layers)
                {
                    adam_update(layer.weights.data_mut(), dw.data(), &mut mom.m_w, &mut mom.v_w, lr, bc1, bc2);
                    adam_update(layer.biases.data_mut(), db.data(), &mut mom.m_b, &mut mom.v_b, lr, bc1, bc2);
                }
            }
        }
    }
}

fn adam_update(
    params: &mut [f32],
    grads: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    lr: f32,
    bias_corr1: f64,
    bias_corr2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i] as f64;
        let mi = ADAM_BETA1 * m[i] as f64 + (1.0 - ADAM_BETA1) * g;
        let vi = ADAM_BETA2 * v[i] as f64 + (1.0 - ADAM_BETA2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let m_hat = mi / bias_corr1;
        let v_hat = vi / bias_corr2;
        params[i] -= (lr as f64 * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
    }
}
