//! Synthetic 2-D classification datasets: gaussian blobs, interleaving
//! moons, and multi-arm spirals. Deterministic given a seed.
//!
//! Generated samples are shuffled once, so the recorded train / pruning /
//! test boundaries slice random subsets: 64% train, 16% pruning, 20% test.
//! The pruning split is the held-out subset of the training data used to
//! score pool members.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const N_FEATURES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    Moons,
    Spiral,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(DatasetKind::Blobs),
            "moons" => Ok(DatasetKind::Moons),
            "spiral" => Ok(DatasetKind::Spiral),
            other => Err(Error::Parameter(format!("unknown dataset kind: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Pruning,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "pruning" => Ok(Split::Pruning),
            "test" => Ok(Split::Test),
            other => Err(Error::Parameter(format!("unknown split: {other}"))),
        }
    }
}

/// Half-open index ranges into the sample order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: (usize, usize),
    pub pruning: (usize, usize),
    pub test: (usize, usize),
}

impl SplitRanges {
    /// 64/16/20 split of `n` samples.
    pub fn standard(n: usize) -> Self {
        let train_end = n * 16 / 25;
        let pruning_end = n * 4 / 5;
        Self {
            train: (0, train_end),
            pruning: (train_end, pruning_end),
            test: (pruning_end, n),
        }
    }

    pub fn of(&self, split: Split) -> (usize, usize) {
        match split {
            Split::Train => self.train,
            Split::Pruning => self.pruning,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<u16>,
    pub n_classes: usize,
    pub splits: SplitRanges,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.shape()[1]
    }

    /// Copies the feature rows of a split into a fresh tensor.
    pub fn split_features(&self, split: Split) -> Tensor {
        let (start, end) = self.splits.of(split);
        self.features_of_range(start, end)
    }

    pub fn split_labels(&self, split: Split) -> &[u16] {
        let (start, end) = self.splits.of(split);
        &self.labels[start..end]
    }

    pub fn split_len(&self, split: Split) -> usize {
        let (start, end) = self.splits.of(split);
        end - start
    }

    /// Feature rows `[start, end)` as a tensor.
    pub fn features_of_range(&self, start: usize, end: usize) -> Tensor {
        let d = self.n_features();
        let data = self.features.data()[start * d..end * d].to_vec();
        Tensor::new(vec![end - start, d], data).expect("range slice is rectangular")
    }

    pub fn validate(&self) -> Result<()> {
        let (n, _) = self.features.dims2()?;
        if n != self.labels.len() {
            return Err(Error::Corrupt(format!(
                "{} feature rows but {} labels",
                n,
                self.labels.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l as usize >= self.n_classes) {
            return Err(Error::Corrupt(format!(
                "label {l} out of range for {} classes",
                self.n_classes
            )));
        }
        if self.splits.test.1 != n || self.splits.train.0 != 0 {
            return Err(Error::Corrupt("split ranges do not cover the dataset".into()));
        }
        Ok(())
    }
}

/// Generates a dataset in memory. `noise` is a standard deviation in feature
/// units; `moons` is inherently two-class and rejects other class counts.
pub fn generate(
    kind: DatasetKind,
    n_samples: usize,
    n_classes: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::Parameter("n_samples must be >= 1".into()));
    }
    if n_classes < 2 || n_classes > u16::MAX as usize {
        return Err(Error::Parameter("n_classes must be in [2, 65535]".into()));
    }
    if kind == DatasetKind::Moons && n_classes != 2 {
        return Err(Error::Parameter("moons is a two-class dataset".into()));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::Parameter("noise must be finite and >= 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: Vec<([f32; 2], u16)> = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        // Balanced labels: class c gets every n_classes-th sample.
        let class = (i % n_classes) as u16;
        let point = match kind {
            DatasetKind::Blobs => blob_point(class, n_classes, noise, &mut rng),
            DatasetKind::Moons => moon_point(class, noise, &mut rng),
            DatasetKind::Spiral => spiral_point(class, n_classes, noise, &mut rng),
        };
        samples.push((point, class));
    }

    // Fisher-Yates so split ranges carry random subsets.
    for i in (1..samples.len()).rev() {
        let j = rng.gen_range(0..=i);
        samples.swap(i, j);
    }

    let mut features = Vec::with_capacity(n_samples * N_FEATURES);
    let mut labels = Vec::with_capacity(n_samples);
    for (p, l) in samples {
        features.extend_from_slice(&p);
        labels.push(l);
    }
    let dataset = Dataset {
        features: Tensor::new(vec![n_samples, N_FEATURES], features)?,
        labels,
        n_classes,
        splits: SplitRanges::standard(n_samples),
    };
    dataset.validate()?;
    Ok(dataset)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn blob_point(class: u16, n_classes: usize, noise: f64, rng: &mut ChaCha8Rng) -> [f32; 2] {
    let angle = 2.0 * std::f64::consts::PI * class as f64 / n_classes as f64;
    let (cx, cy) = (3.0 * angle.cos(), 3.0 * angle.sin());
    [
        (cx + noise * gauss(rng)) as f32,
        (cy + noise * gauss(rng)) as f32,
    ]
}

fn moon_point(class: u16, noise: f64, rng: &mut ChaCha8Rng) -> [f32; 2] {
    let t = rng.gen_range(0.0..std::f64::consts::PI);
    let (x, y) = if class == 0 {
        (t.cos(), t.sin())
    } else {
        (1.0 - t.cos(), 0.5 - t.sin())
    };
    [
        (x + noise * gauss(rng)) as f32,
        (y + noise * gauss(rng)) as f32,
    ]
}

fn spiral_point(class: u16, n_classes: usize, noise: f64, rng: &mut ChaCha8Rng) -> [f32; 2] {
    let t = rng.gen_range(0.1..1.0);
    let theta =
        2.0 * std::f64::consts::PI * (class as f64 / n_classes as f64 + 0.75 * t) + noise * gauss(rng);
    let r = 3.0 * t;
    [(r * theta.cos()) as f32, (r * theta.sin()) as f32]
}
