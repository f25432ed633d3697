//! Post-training 8-bit affine quantization.
//!
//! The stored integer relates to the real value by
//! `real = (int8 - zero_point) * scale`. Weights use the symmetric scheme:
//! `zero_point = 0` and codes in `[-127, 127]`. Activations use the full
//! asymmetric range `[-128, 127]`.
//!
//! Quantized inference runs as dequantize-then-float compute: after
//! `quantize_model` the float weight tensors hold the dequantized image of
//! the int8 codes, so the regular forward pass observes exactly the
//! quantization error and nothing else. Rounding is half away from zero
//! everywhere, and is recorded in the model file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward_cached, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuantRole {
    Weight,
    #[default]
    Activation,
}

impl QuantRole {
    /// Valid code range for this role.
    pub fn range(self) -> (i32, i32) {
        match self {
            QuantRole::Weight => (-127, 127),
            QuantRole::Activation => (-128, 127),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    /// Not serialized; the surrounding context (weight tensor vs activation
    /// list) determines the role on load.
    #[serde(skip)]
    pub role: QuantRole,
}

impl QuantParams {
    pub fn weight(scale: f64) -> Self {
        Self {
            scale,
            zero_point: 0,
            role: QuantRole::Weight,
        }
    }

    pub fn activation(scale: f64, zero_point: i32) -> Self {
        Self {
            scale,
            zero_point,
            role: QuantRole::Activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Numeric(format!("invalid scale {}", self.scale)));
        }
        match self.role {
            QuantRole::Weight if self.zero_point != 0 => Err(Error::Corrupt(format!(
                "weight zero_point must be 0, got {}",
                self.zero_point
            ))),
            QuantRole::Activation if !(-128..=127).contains(&self.zero_point) => {
                Err(Error::Corrupt(format!(
                    "activation zero_point {} outside [-128, 127]",
                    self.zero_point
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i8>,
    pub params: QuantParams,
}

/// Symmetric per-tensor weight calibration: `scale = max|w| / 127`.
/// An all-zero tensor gets scale 1 by convention.
pub fn calibrate_weight_params(weights: &Tensor) -> QuantParams {
    let max_abs = weights
        .data()
        .iter()
        .fold(0.0f32, |acc, w| acc.max(w.abs()));
    let scale = if max_abs > 0.0 {
        max_abs as f64 / 127.0
    } else {
        1.0
    };
    QuantParams::weight(scale)
}

/// Asymmetric activation calibration from a sample batch: the observed
/// range, extended to include zero, maps into `[-128, 127]`. Including zero
/// keeps the zero_point inside int8 for any batch and zero exactly
/// representable; a degenerate (all-zero) batch gets scale 1.
pub fn calibrate_activation_params(samples: &Tensor) -> QuantParams {
    let mut min = 0.0f32;
    let mut max = 0.0f32;
    for &v in samples.data() {
        if v.is_finite() {
            min = min.min(v);
            max = max.max(v);
        }
    }
    if max == min {
        return QuantParams::activation(1.0, -128);
    }
    let scale = (max as f64 - min as f64) / 255.0;
    let zp = (-128.0 - min as f64 / scale).round().clamp(-128.0, 127.0) as i32;
    QuantParams::activation(scale, zp)
}

/// `q = clamp(round(r / scale) + zero_point)`, rounding half away from zero.
pub fn quantize(t: &Tensor, params: &QuantParams) -> QuantizedTensor {
    let (qmin, qmax) = params.role.range();
    let data = t
        .data()
        .iter()
        .map(|&r| {
            let q = (r as f64 / params.scale).round() + params.zero_point as f64;
            q.clamp(qmin as f64, qmax as f64) as i8
        })
        .collect();
    QuantizedTensor {
        shape: t.shape().to_vec(),
        data,
        params: *params,
    }
}

/// `r = (q - zero_point) * scale`, elementwise.
pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    let data = q
        .data
        .iter()
        .map(|&v| ((v as i32 - q.params.zero_point) as f64 * q.params.scale) as f32)
        .collect();
    Tensor::new(q.shape.clone(), data).expect("quantized shape is consistent")
}

/// Quantizes every weight tensor symmetrically and records activation
/// parameters calibrated on `calibration` (entry 0: model input, entry i+1:
/// output of layer i). Float weights are replaced by their dequantized
/// image, so later forward passes are the quantized inference path.
pub fn quantize_model(model: &Model, calibration: &Tensor) -> Result<Model> {
    let (batch, _) = calibration.dims2()?;
    if batch == 0 {
        return Err(Error::Config("empty calibration batch".into()));
    }
    let cache = forward_cached(model, calibration)?;
    let act_params: Vec<QuantParams> = cache.iter().map(calibrate_activation_params).collect();

    let mut out = model.clone();
    for layer in &mut out.layers {
        let params = calibrate_weight_params(&layer.weights);
        let q = quantize(&layer.weights, &params);
        layer.weights = dequantize(&q);
        layer.qweights = Some(q);
    }
    out.metadata.activation_quant = Some(act_params);
    out.metadata.sparsity = out
        .layers
        .iter()
        .map(|l| l.weights.sparsity() as f32)
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use crate::prune::build_mask;

    #[test]
    fn weight_calibration_uses_max_abs_over_127() {
        let p = calibrate_weight_params(&Tensor::from_vec(vec![-1.0, 0.5, 0.254]));
        assert!((p.scale - 1.0 / 127.0).abs() < 1e-12);
        assert_eq!(p.zero_point, 0);

        let zero = calibrate_weight_params(&Tensor::from_vec(vec![0.0; 4]));
        assert_eq!(zero.scale, 1.0);

        let big = calibrate_weight_params(&Tensor::from_vec(vec![127.0]));
        assert_eq!(big.scale, 1.0);
    }

    #[test]
    fn activation_calibration_spans_the_observed_range() {
        let samples = Tensor::from_vec(vec![0.0, 1.0, 2.55, 0.3]);
        let p = calibrate_activation_params(&samples);
        assert!((p.scale - 0.01).abs() < 1e-9);
        assert_eq!(p.zero_point, -128);
    }

    #[test]
    fn degenerate_batches_use_unit_scale_and_map_constants_exactly() {
        // All-zero batch: max == min, scale 1 by convention, zero exact.
        let p = calibrate_activation_params(&Tensor::from_vec(vec![0.0; 8]));
        assert_eq!(p.scale, 1.0);
        assert_eq!(p.zero_point, -128);
        let q = quantize(&Tensor::from_vec(vec![0.0]), &p);
        assert_eq!(dequantize(&q).data(), &[0.0]);

        // A constant batch calibrates over [0, c] and maps c exactly.
        let p = calibrate_activation_params(&Tensor::from_vec(vec![1.0; 8]));
        assert!((p.scale - 1.0 / 255.0).abs() < 1e-12);
        assert_eq!(p.zero_point, -128);
        let q = quantize(&Tensor::from_vec(vec![1.0]), &p);
        assert_eq!(dequantize(&q).data(), &[1.0]);
    }

    #[test]
    fn positive_only_ranges_keep_the_error_bound() {
        let t = Tensor::from_vec(vec![5.5071583, 2.5659735]);
        let p = calibrate_activation_params(&t);
        let r = dequantize(&quantize(&t, &p));
        for (orig, back) in t.data().iter().zip(r.data()) {
            assert!((*orig as f64 - *back as f64).abs() <= p.scale / 2.0 + 1e-9);
        }
    }

    #[test]
    fn symmetric_range_rounds_zero_point_half_away_from_zero() {
        let p = calibrate_activation_params(&Tensor::from_vec(vec![-1.0, 1.0]));
        assert!((p.scale - 2.0 / 255.0).abs() < 1e-12);
        // -128 + 127.5 = -0.5 rounds away from zero to -1.
        assert_eq!(p.zero_point, -1);
    }

    #[test]
    fn quantize_matches_hand_values() {
        let p = QuantParams::weight(1.0 / 127.0);
        let q = quantize(&Tensor::from_vec(vec![0.0, -1.0, 0.5]), &p);
        assert_eq!(q.data, vec![0, -127, 64]);
    }

    #[test]
    fn weights_never_reach_minus_128() {
        let p = QuantParams::weight(1.0 / 127.0);
        let q = quantize(&Tensor::from_vec(vec![-5.0]), &p);
        assert_eq!(q.data, vec![-127]);
        let act = QuantParams::activation(1.0 / 127.0, 0);
        let qa = quantize(&Tensor::from_vec(vec![-5.0]), &act);
        assert_eq!(qa.data, vec![-128]);
    }

    #[test]
    fn dequantize_matches_hand_values() {
        let p = QuantParams::weight(1.0 / 127.0);
        let q = QuantizedTensor {
            shape: vec![2],
            data: vec![0, -127],
            params: p,
        };
        let r = dequantize(&q);
        assert_eq!(r.data()[0], 0.0);
        assert!((r.data()[1] as f64 + 1.0).abs() < 1e-9);
    }

    #[test]
    fn quantize_model_sends_masked_weights_to_zero() {
        let mut model = Model::new(
            &[
                LayerSpec::new(2, 8, Activation::Relu),
                LayerSpec::new(8, 3, Activation::SoftmaxOutput),
            ],
            5,
        )
        .unwrap();
        // Prune half of the first layer by hand.
        let mask = build_mask(&model.layers[0].weights, 0.5);
        for (w, &m) in model.layers[0].weights.data_mut().iter_mut().zip(mask.data()) {
            if m == 0.0 {
                *w = 0.0;
            }
        }
        model.layers[0].mask = Some(mask);

        let calibration = Tensor::from_rows(4, 2, vec![0.1, -0.2, 1.0, 0.5, -1.0, 0.0, 0.3, 0.9]).unwrap();
        let q = quantize_model(&model, &calibration).unwrap();
        let layer = &q.layers[0];
        let codes = &layer.qweights.as_ref().unwrap().data;
        for (i, &m) in layer.mask.as_ref().unwrap().data().iter().enumerate() {
            if m == 0.0 {
                assert_eq!(codes[i], 0);
                assert_eq!(layer.weights.data()[i], 0.0);
            }
        }
        assert_eq!(q.metadata.activation_quant.as_ref().unwrap().len(), 3);
        q.validate().unwrap();
    }

    #[test]
    fn empty_calibration_batch_is_rejected() {
        let model = Model::new(&[LayerSpec::new(2, 2, Activation::SoftmaxOutput)], 0).unwrap();
        let empty = Tensor::new(vec![0, 2], vec![]).unwrap();
        assert!(quantize_model(&model, &empty).is_err());
    }
}
