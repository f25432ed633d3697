//! Pool generation: trains a diverse set of pruned models by sampling
//! training and pruning hyperparameters from a seeded PRNG, quantizes them,
//! and records everything in a manifest.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, LossKind, Model, OptimizerKind};
use crate::prune::{pruned_train, total_steps, train, PruningSchedule, TrainConfig};
use crate::quant::quantize_model;
use crate::store;
use crate::tensor::Tensor;
use crate::vote::argmax;

pub const EPOCH_CHOICES: [u32; 5] = [3, 4, 5, 6, 8];
pub const BATCH_CHOICES: [u32; 3] = [32, 64, 128];
pub const FREQUENCY_CHOICES: [u32; 4] = [100, 200, 300, 400];
pub const LOSS_CHOICES: [LossKind; 3] = [
    LossKind::CategoricalCrossentropy,
    LossKind::MeanSquaredError,
    LossKind::MeanAbsoluteError,
];
pub const OPTIMIZER_CHOICES: [OptimizerKind; 2] = [OptimizerKind::Sgd, OptimizerKind::Adam];
pub const INITIAL_SPARSITY_RANGE: (f64, f64) = (0.1, 0.6);
pub const FINAL_SPARSITY_RANGE: (f64, f64) = (0.7, 0.9);

/// Default calibration batch size for post-training quantization.
pub const CALIBRATION_SAMPLES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub epochs: u32,
    pub batch_size: u32,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub initial_sparsity: f64,
    pub final_sparsity: f64,
    pub frequency: u32,
    pub seed: u64,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !EPOCH_CHOICES.contains(&self.epochs)
            || !BATCH_CHOICES.contains(&self.batch_size)
            || !FREQUENCY_CHOICES.contains(&self.frequency)
        {
            return Err(Error::Config(format!("hyperparameters outside their sets: {self:?}")));
        }
        let (ilo, ihi) = INITIAL_SPARSITY_RANGE;
        let (flo, fhi) = FINAL_SPARSITY_RANGE;
        if !(ilo..=ihi).contains(&self.initial_sparsity)
            || !(flo..=fhi).contains(&self.final_sparsity)
            || self.initial_sparsity >= self.final_sparsity
        {
            return Err(Error::Config(format!(
                "sparsity out of range: s_i={}, s_f={}",
                self.initial_sparsity, self.final_sparsity
            )));
        }
        Ok(())
    }
}

/// Learning rates are not part of the sampled grid; they are fixed per
/// optimizer.
pub fn default_learning_rate(kind: OptimizerKind) -> f32 {
    match kind {
        OptimizerKind::Sgd => 0.1,
        OptimizerKind::Adam => 0.005,
    }
}

/// Draws every field uniformly from its set or range.
pub fn sample_hyperparams<R: Rng>(rng: &mut R) -> HyperParams {
    HyperParams {
        epochs: EPOCH_CHOICES[rng.gen_range(0..EPOCH_CHOICES.len())],
        batch_size: BATCH_CHOICES[rng.gen_range(0..BATCH_CHOICES.len())],
        loss: LOSS_CHOICES[rng.gen_range(0..LOSS_CHOICES.len())],
        optimizer: OPTIMIZER_CHOICES[rng.gen_range(0..OPTIMIZER_CHOICES.len())],
        initial_sparsity: rng.gen_range(INITIAL_SPARSITY_RANGE.0..=INITIAL_SPARSITY_RANGE.1),
        final_sparsity: rng.gen_range(FINAL_SPARSITY_RANGE.0..=FINAL_SPARSITY_RANGE.1),
        frequency: FREQUENCY_CHOICES[rng.gen_range(0..FREQUENCY_CHOICES.len())],
        seed: rng.gen(),
    }
}

/// Stable per-model seed: SHA-256 over `(base_seed, index)`, truncated.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_le_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub model_id: String,
    /// Model file name, relative to the manifest directory.
    pub path: String,
    pub hyperparams: HyperParams,
    pub achieved_sparsity: Vec<f32>,
    pub pruning_accuracy: f32,
    pub file_size_bytes: u64,
    pub quantized: bool,
    pub status: EntryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifest {
    pub pool_id: String,
    pub dataset_sha256: String,
    pub entries: Vec<PoolEntry>,
}

impl PoolManifest {
    pub fn ok_entries(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.iter().filter(|e| e.status == EntryStatus::Ok)
    }
}

#[derive(Debug, Clone)]
pub struct PoolConfig {
    pub size: usize,
    pub base_seed: u64,
    /// Hidden layer widths; input/output dims come from the dataset.
    pub hidden: Vec<usize>,
    pub prune: bool,
    pub quantize: bool,
    pub calibration_samples: usize,
    /// Concurrent training jobs; `None` uses all cores.
    pub jobs: Option<usize>,
}

impl PoolConfig {
    pub fn new(size: usize, base_seed: u64) -> Self {
        Self {
            size,
            base_seed,
            hidden: vec![64, 64],
            prune: true,
            quantize: true,
            calibration_samples: CALIBRATION_SAMPLES,
            jobs: None,
        }
    }
}

/// Layer specs for a dataset: ReLU hidden layers, softmax output.
pub fn layer_specs(dataset: &Dataset, hidden: &[usize]) -> Vec<LayerSpec> {
    let mut dims = vec![dataset.n_features()];
    dims.extend_from_slice(hidden);
    dims.push(dataset.n_classes);
    let mut specs = Vec::with_capacity(dims.len() - 1);
    for i in 0..dims.len() - 1 {
        let act = if i + 2 == dims.len() {
            Activation::SoftmaxOutput
        } else {
            Activation::Relu
        };
        specs.push(LayerSpec::new(dims[i], dims[i + 1], act));
    }
    specs
}

/// Argmax accuracy of a single model on a labelled batch.
pub fn model_accuracy(model: &Model, features: &Tensor, labels: &[u16]) -> Result<f32> {
    let out = model.forward(features)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| argmax(out.row(*i)) == l as usize)
        .count();
    Ok(correct as f32 / labels.len().max(1) as f32)
}

/// Trains, prunes, quantizes and saves `config.size` models. Each job is
/// independent and seeded by `derive_seed(base_seed, index)`, so generation
/// parallelizes deterministically. Failed jobs are recorded in the manifest;
/// only a fully failed pool is an error.
pub fn generate_pool(
    dataset: &Dataset,
    dataset_sha256: &str,
    config: &PoolConfig,
    out_dir: &Path,
) -> Result<PoolManifest> {
    if config.size == 0 {
        return Err(Error::Parameter("pool size must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let specs = layer_specs(dataset, &config.hidden);

    let run = |i: usize| -> PoolEntry {
        let seed = derive_seed(config.base_seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hp = sample_hyperparams(&mut rng);
        hp.seed = seed;
        let model_id = format!("m{i:03}");
        let file_name = format!("{model_id}.json");
        match train_pool_model(dataset, &specs, &hp, config) {
            Ok(model) => {
                let path = out_dir.join(&file_name);
                match store::save_model(&model, &path) {
                    Ok(bytes) => PoolEntry {
                        model_id,
                        path: file_name,
                        hyperparams: hp,
                        achieved_sparsity: model.metadata.sparsity.clone(),
                        pruning_accuracy: model.metadata.accuracy.unwrap_or(0.0),
                        file_size_bytes: bytes,
                        quantized: model.is_quantized(),
                        status: EntryStatus::Ok,
                        error: None,
                    },
                    Err(e) => failed_entry(model_id, file_name, hp, e),
                }
            }
            Err(e) => failed_entry(model_id, file_name, hp, e),
        }
    };

    let entries: Vec<PoolEntry> = match config.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| (0..config.size).into_par_iter().map(run).collect()),
        None => (0..config.size).into_par_iter().map(run).collect(),
    };

    if entries.iter().all(|e| e.status == EntryStatus::Failed) {
        return Err(Error::Pool(format!(
            "all {} training jobs failed; first error: {}",
            entries.len(),
            entries[0].error.as_deref().unwrap_or("unknown")
        )));
    }

    let pool_id = {
        let mut hasher = Sha256::new();
        hasher.update(dataset_sha256.as_bytes());
        hasher.update(config.base_seed.to_le_bytes());
        hasher.update((config.size as u64).to_le_bytes());
        format!("pool-{}", hex_prefix(&hasher.finalize(), 8))
    };

    Ok(PoolManifest {
        pool_id,
        dataset_sha256: dataset_sha256.to_string(),
        entries,
    })
}

/// Trains one pool member according to its hyperparameters.
pub fn train_pool_model(
    dataset: &Dataset,
    specs: &[LayerSpec],
    hp: &HyperParams,
    config: &PoolConfig,
) -> Result<Model> {
    let train_config = TrainConfig {
        loss: hp.loss,
        optimizer: hp.optimizer,
        learning_rate: default_learning_rate(hp.optimizer),
        epochs: hp.epochs as usize,
        batch_size: hp.batch_size as usize,
        seed: hp.seed,
    };
    let mut model = if config.prune {
        hp.validate()?;
        let steps = total_steps(dataset, &train_config);
        let dt = hp.frequency as usize;
        // Largest n with t0 + n*dt inside the run; t0 is fixed to 0.
        if steps <= dt {
            return Err(Error::Config(format!(
                "run of {steps} steps cannot host a pruning event at frequency {dt}"
            )));
        }
        let n = (steps - 1) / dt;
        let schedule =
            PruningSchedule::new(hp.initial_sparsity, hp.final_sparsity, 0, n, dt)?;
        pruned_train(dataset, specs, &train_config, &schedule)?
    } else {
        train(dataset, specs, &train_config)?
    };

    let pruning_x = dataset.split_features(Split::Pruning);
    let pruning_y = dataset.split_labels(Split::Pruning);
    model.metadata.accuracy = Some(model_accuracy(&model, &pruning_x, pruning_y)?);
    model.metadata.hyperparams = Some(*hp);

    if config.quantize {
        let n_calib = config.calibration_samples.min(dataset.split_len(Split::Pruning)).max(1);
        let (start, _) = dataset.splits.pruning;
        let calibration = dataset.features_of_range(start, start + n_calib);
        model = quantize_model(&model, &calibration)?;
    }
    Ok(model)
}

fn failed_entry(model_id: String, path: String, hp: HyperParams, e: Error) -> PoolEntry {
    PoolEntry {
        model_id,
        path,
        hyperparams: hp,
        achieved_sparsity: vec![],
        pruning_accuracy: 0.0,
        file_size_bytes: 0,
        quantized: false,
        status: EntryStatus::Failed,
        error: Some(e.to_string()),
    }
}

fn hex_prefix(digest: &[u8], bytes: usize) -> String {
    digest[..bytes].iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads every ok model of a manifest, in manifest (model_id) order.
pub fn load_pool_models(manifest: &PoolManifest, dir: &Path) -> Result<Vec<(String, Model)>> {
    manifest
        .ok_entries()
        .map(|e| Ok((e.model_id.clone(), store::load_model(&dir.join(&e.path))?)))
        .collect()
}
