//! Loss functions over probability (or raw) outputs and one-hot targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clipped to this floor before taking logs.
pub(crate) const CE_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CategoricalCrossentropy,
    MeanSquaredError,
    MeanAbsoluteError,
}

/// Scalar loss for a batch.
///
/// Cross-entropy averages `-sum_j y_j ln p_j` over the batch; squared and
/// absolute error average over every element.
pub fn loss(kind: LossKind, predictions: &Tensor, targets: &Tensor) -> Result<f64> {
    if predictions.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "predictions {:?} vs targets {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    let (batch, classes) = predictions.dims2()?;
    let p = predictions.data();
    let y = targets.data();
    let total = match kind {
        LossKind::CategoricalCrossentropy => {
            let mut acc = 0.0f64;
            for (pi, yi) in p.iter().zip(y) {
                if *yi != 0.0 {
                    let clipped = (*pi as f64).clamp(CE_CLIP, 1.0);
                    acc -= *yi as f64 * clipped.ln();
                }
            }
            acc / batch as f64
        }
        LossKind::MeanSquaredError => {
            let mut acc = 0.0f64;
            for (pi, yi) in p.iter().zip(y) {
                let d = *pi as f64 - *yi as f64;
                acc += d * d;
            }
            acc / (batch * classes) as f64
        }
        LossKind::MeanAbsoluteError => {
            let mut acc = 0.0f64;
            for (pi, yi) in p.iter().zip(y) {
                acc += (*pi as f64 - *yi as f64).abs();
            }
            acc / (batch * classes) as f64
        }
    };
    Ok(total)
}

/// One-hot encodes `labels` into a `batch x n_classes` tensor.
pub fn one_hot(labels: &[u16], n_classes: usize) -> Tensor {
    let mut data = vec![0.0f32; labels.len() * n_classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * n_classes + l as usize] = 1.0;
    }
    Tensor::new(vec![labels.len(), n_classes], data).expect("one-hot shape is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_is_zero_on_identical_tensors() {
        let t = Tensor::from_rows(2, 2, vec![0.1, 0.9, 0.4, 0.6]).unwrap();
        assert_eq!(loss(LossKind::MeanSquaredError, &t, &t).unwrap(), 0.0);
    }

    #[test]
    fn crossentropy_of_uniform_two_class_is_ln_two() {
        let p = Tensor::from_rows(1, 2, vec![0.5, 0.5]).unwrap();
        let y = Tensor::from_rows(1, 2, vec![1.0, 0.0]).unwrap();
        let l = loss(LossKind::CategoricalCrossentropy, &p, &y).unwrap();
        assert!((l - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn mae_matches_hand_value() {
        let p = Tensor::from_rows(1, 2, vec![0.2, 0.8]).unwrap();
        let y = Tensor::from_rows(1, 2, vec![0.0, 1.0]).unwrap();
        let l = loss(LossKind::MeanAbsoluteError, &p, &y).unwrap();
        // mean(|0.2 - 0|, |0.8 - 1|) = 0.2, up to f32 storage of the inputs.
        let exact = ((0.2f32 as f64).abs() + (0.8f32 as f64 - 1.0).abs()) / 2.0;
        assert!((l - exact).abs() < 1e-9);
        assert!((l - 0.2).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = Tensor::from_rows(1, 2, vec![0.5, 0.5]).unwrap();
        let y = Tensor::from_rows(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(loss(LossKind::MeanSquaredError, &p, &y).is_err());
    }
}
