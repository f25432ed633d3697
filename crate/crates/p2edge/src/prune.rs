//! Gradual magnitude pruning.
//!
//! Sparsity follows a cubic ramp from `initial_sparsity` to `final_sparsity`
//! across scheduled events: at step `t` in `{t0, t0+dt, ..., t0+n*dt}`,
//!
//! ```text
//! s_t = s_f + (s_i - s_f) * (1 - (t - t0) / (n * dt))^3
//! ```
//!
//! At each event every weight tensor is re-sorted by magnitude and the
//! smallest entries are masked to zero. Masked weights receive no optimizer
//! updates; once zeroed they have the smallest possible magnitude, so later
//! events can only keep them masked.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{backward, one_hot, LayerSpec, LossKind, Model, OptimizerKind, OptimizerState};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningSchedule {
    /// Sparsity applied at the first event (`s_i`).
    pub initial_sparsity: f64,
    /// Sparsity reached at the last event (`s_f`).
    pub final_sparsity: f64,
    /// Step of the first pruning event (`t0`).
    pub start_step: usize,
    /// Number of sparsity increments (`n`); there are `n + 1` events.
    pub steps: usize,
    /// Steps between events (`dt`).
    pub frequency: usize,
}

impl PruningSchedule {
    pub fn new(
        initial_sparsity: f64,
        final_sparsity: f64,
        start_step: usize,
        steps: usize,
        frequency: usize,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&initial_sparsity)
            || !(0.0..=1.0).contains(&final_sparsity)
            || initial_sparsity >= final_sparsity
        {
            return Err(Error::Config(format!(
                "sparsity must satisfy 0 <= s_i < s_f <= 1, got s_i={initial_sparsity}, s_f={final_sparsity}"
            )));
        }
        if steps < 1 || frequency < 1 {
            return Err(Error::Config(
                "steps and frequency must both be >= 1".into(),
            ));
        }
        Ok(Self {
            initial_sparsity,
            final_sparsity,
            start_step,
            steps,
            frequency,
        })
    }

    /// Step of the final pruning event.
    pub fn last_event(&self) -> usize {
        self.start_step + self.steps * self.frequency
    }

    pub fn is_event(&self, t: usize) -> bool {
        t >= self.start_step
            && t <= self.last_event()
            && (t - self.start_step) % self.frequency == 0
    }

    /// Scheduled sparsity at event step `t`.
    pub fn sparsity_at(&self, t: usize) -> Result<f64> {
        if !self.is_event(t) {
            return Err(Error::OutOfSchedule { step: t });
        }
        let progress = (t - self.start_step) as f64 / (self.steps * self.frequency) as f64;
        let remaining = 1.0 - progress;
        let s = self.final_sparsity
            + (self.initial_sparsity - self.final_sparsity) * remaining * remaining * remaining;
        // Round-off can land one ulp outside the schedule's range.
        Ok(s.clamp(self.initial_sparsity, self.final_sparsity))
    }
}

/// Binary mask keeping the largest-magnitude entries.
///
/// Exactly `floor(target_sparsity * numel)` entries are zeroed, chosen as the
/// smallest `|w|`; ties go to the lowest flat index.
pub fn build_mask(weights: &Tensor, target_sparsity: f64) -> Tensor {
    assert!(
        (0.0..=1.0).contains(&target_sparsity),
        "target sparsity must be in [0, 1]"
    );
    let n = weights.numel();
    let zeros = (target_sparsity * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let data = weights.data();
    order.sort_unstable_by(|&a, &b| {
        data[a]
            .abs()
            .partial_cmp(&data[b].abs())
            .expect("finite weights compare totally")
            .then(a.cmp(&b))
    });
    let mut mask = vec![1.0f32; n];
    for &i in order.iter().take(zeros) {
        mask[i] = 0.0;
    }
    Tensor::new(weights.shape().to_vec(), mask).expect("mask shape matches weights")
}

fn apply_mask(weights: &mut Tensor, mask: &Tensor) {
    for (w, &m) in weights.data_mut().iter_mut().zip(mask.data()) {
        if m == 0.0 {
            *w = 0.0;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Trains with gradual magnitude pruning. The returned model carries the
/// final masks, and every masked weight is exactly zero.
pub fn pruned_train(
    dataset: &Dataset,
    specs: &[LayerSpec],
    config: &TrainConfig,
    schedule: &PruningSchedule,
) -> Result<Model> {
    fit(dataset, specs, config, Some(schedule))
}

/// Plain training without pruning; used for baseline models.
pub fn train(dataset: &Dataset, specs: &[LayerSpec], config: &TrainConfig) -> Result<Model> {
    fit(dataset, specs, config, None)
}

/// Optimizer steps in one full run: `epochs * ceil(train / batch_size)`.
pub fn total_steps(dataset: &Dataset, config: &TrainConfig) -> usize {
    let n = dataset.split_len(Split::Train);
    config.epochs * n.div_ceil(config.batch_size)
}

fn fit(
    dataset: &Dataset,
    specs: &[LayerSpec],
    config: &TrainConfig,
    schedule: Option<&PruningSchedule>,
) -> Result<Model> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be >= 1".into()));
    }
    let n_train = dataset.split_len(Split::Train);
    if n_train == 0 {
        return Err(Error::Config("empty training split".into()));
    }
    let steps = total_steps(dataset, config);
    if let Some(s) = schedule {
        if s.last_event() + 1 > steps {
            return Err(Error::Config(format!(
                "pruning schedule ends at step {} but the run has only {} steps",
                s.last_event(),
                steps
            )));
        }
    }

    let features = dataset.split_features(Split::Train);
    let targets = one_hot(dataset.split_labels(Split::Train), dataset.n_classes);
    let d = dataset.n_features();
    let n_classes = dataset.n_classes;

    let mut model = Model::new(specs, config.seed)?;
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, &model);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let mut order: Vec<usize> = (0..n_train).collect();
    let mut t = 0usize;
    for _epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch_size) {
            if let Some(s) = schedule {
                if s.is_event(t) {
                    let target = s.sparsity_at(t)?;
                    for layer in &mut model.layers {
                        let mask = build_mask(&layer.weights, target);
                        apply_mask(&mut layer.weights, &mask);
                        layer.mask = Some(mask);
                    }
                }
            }

            let mut batch_x = Vec::with_capacity(chunk.len() * d);
            let mut batch_y = Vec::with_capacity(chunk.len() * n_classes);
            for &i in chunk {
                batch_x.extend_from_slice(features.row(i));
                batch_y.extend_from_slice(targets.row(i));
            }
            let batch_x = Tensor::new(vec![chunk.len(), d], batch_x)?;
            let batch_y = Tensor::new(vec![chunk.len(), n_classes], batch_y)?;

            let mut grads = backward(&model, &batch_x, &batch_y, config.loss)?;
            for (layer, (dw, _db)) in model.layers.iter().zip(&mut grads.layers) {
                if let Some(mask) = &layer.mask {
                    for (g, &m) in dw.data_mut().iter_mut().zip(mask.data()) {
                        if m == 0.0 {
                            *g = 0.0;
                        }
                    }
                }
            }
            opt.step(&mut model, &grads);
            for layer in &mut model.layers {
                if let Some(mask) = &layer.mask {
                    // Adam momentum could push a frozen weight off zero.
                    let mask = mask.clone();
                    apply_mask(&mut layer.weights, &mask);
                }
            }
            t += 1;
        }
        for layer in &model.layers {
            if !layer.weights.is_finite() || !layer.biases.is_finite() {
                return Err(Error::Numeric("training diverged to non-finite values".into()));
            }
        }
    }

    model.metadata.sparsity = model
        .layers
        .iter()
        .map(|l| l.weights.sparsity() as f32)
        .collect();
    Ok(model)
}
