//! Bit-exact portable serialization.
//!
//! Models are a JSON envelope holding base64 tensor payloads; datasets are a
//! small binary format fingerprinted by SHA-256. Both formats round-trip
//! exactly, which makes compression ratios measurable: a pool model's size
//! is compared against `dense_f32_size`, the byte size of the same model
//! with every tensor (weights, biases, masks) stored dense as f32.
//!
//! Tensor payload encodings:
//!
//! * `dense-b64` — raw little-endian values, row-major.
//! * `sparse-coo-b64` — `k` strictly increasing `u32` flat indices followed
//!   by the `k` nonzero values; `k` is implied by the payload length.
//!
//! A tensor is stored sparse when COO is the smaller encoding: one entry
//! costs `4 + sizeof(dtype)` bytes against `sizeof(dtype)` dense, so the
//! sparsity threshold is 0.5 for f32 and 0.8 for i8 payloads.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, DatasetKind, SplitRanges};
use crate::error::{Error, Result};
use crate::nn::{Layer, LayerSpec, Model, ModelMetadata};
use crate::quant::{dequantize, QuantParams, QuantRole, QuantizedTensor};
use crate::tensor::Tensor;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const ROUNDING_MODE: &str = "half-away-from-zero";
pub const DATASET_MAGIC: [u8; 4] = *b"P2ED";
pub const DATASET_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// generic JSON artifacts
// ---------------------------------------------------------------------------

/// Serializes compact JSON and writes it atomically (temp file + rename).
/// Struct field order is fixed, so output is byte-stable.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<u64> {
    let bytes = serde_json::to_vec(value)?;
    write_atomic(path, &bytes)?;
    Ok(bytes.len() as u64)
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// model files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "i8")]
    I8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I8 => 1,
        }
    }

    /// Sparsity above which COO beats dense: `4 / (4 + size)`.
    fn sparse_threshold(self) -> f64 {
        4.0 / (4.0 + self.size() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Encoding {
    #[serde(rename = "dense-b64")]
    Dense,
    #[serde(rename = "sparse-coo-b64")]
    SparseCoo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct QuantView {
    scale: f64,
    zero_point: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: Dtype,
    encoding: Encoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quant: Option<QuantView>,
    data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    arch: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
    metadata: ModelMetadata,
    rounding_mode: String,
}

enum Values {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

impl Values {
    fn dtype(&self) -> Dtype {
        match self {
            Values::F32(_) => Dtype::F32,
            Values::I8(_) => Dtype::I8,
        }
    }

    fn sparsity(&self) -> f64 {
        let (zeros, len) = match self {
            Values::F32(v) => (v.iter().filter(|x| **x == 0.0).count(), v.len()),
            Values::I8(v) => (v.iter().filter(|x| **x == 0).count(), v.len()),
        };
        if len == 0 {
            0.0
        } else {
            zeros as f64 / len as f64
        }
    }
}

fn encode_entry(name: &str, shape: &[usize], values: Values, quant: Option<QuantView>) -> TensorEntry {
    let dtype = values.dtype();
    let encoding = if values.sparsity() > dtype.sparse_threshold() {
        Encoding::SparseCoo
    } else {
        Encoding::Dense
    };
    let payload = match (&values, encoding) {
        (Values::F32(v), Encoding::Dense) => {
            let mut bytes = Vec::with_capacity(v.len() * 4);
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            bytes
        }
        (Values::I8(v), Encoding::Dense) => v.iter().map(|x| *x as u8).collect(),
        (Values::F32(v), Encoding::SparseCoo) => {
            let nonzero: Vec<(u32, f32)> = v
                .iter()
                .enumerate()
                .filter(|(_, x)| **x != 0.0)
                .map(|(i, x)| (i as u32, *x))
                .collect();
            let mut bytes = Vec::with_capacity(nonzero.len() * 8);
            for (i, _) in &nonzero {
                bytes.extend_from_slice(&i.to_le_bytes());
            }
            for (_, x) in &nonzero {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            bytes
        }
        (Values::I8(v), Encoding::SparseCoo) => {
            let nonzero: Vec<(u32, i8)> = v
                .iter()
                .enumerate()
                .filter(|(_, x)| **x != 0)
                .map(|(i, x)| (i as u32, *x))
                .collect();
            let mut bytes = Vec::with_capacity(nonzero.len() * 5);
            for (i, _) in &nonzero {
                bytes.extend_from_slice(&i.to_le_bytes());
            }
            for (_, x) in &nonzero {
                bytes.push(*x as u8);
            }
            bytes
        }
    };
    TensorEntry {
        name: name.to_string(),
        shape: shape.to_vec(),
        dtype,
        encoding,
        quant,
        data: BASE64.encode(payload),
    }
}

fn decode_entry(entry: &TensorEntry) -> Result<Values> {
    let numel: usize = entry.shape.iter().product();
    let payload = BASE64
        .decode(&entry.data)
        .map_err(|e| Error::Corrupt(format!("tensor {}: bad base64: {e}", entry.name)))?;
    let size = entry.dtype.size();
    match entry.encoding {
        Encoding::Dense => {
            if payload.len() != numel * size {
                return Err(Error::Corrupt(format!(
                    "tensor {}: dense payload is {} bytes, expected {}",
                    entry.name,
                    payload.len(),
                    numel * size
                )));
            }
            Ok(match entry.dtype {
                Dtype::F32 => Values::F32(
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk is 4 bytes")))
                        .collect(),
                ),
                Dtype::I8 => Values::I8(payload.iter().map(|b| *b as i8).collect()),
            })
        }
        Encoding::SparseCoo => {
            let entry_bytes = 4 + size;
            if payload.len() % entry_bytes != 0 {
                return Err(Error::Corrupt(format!(
                    "tensor {}: sparse payload of {} bytes is not a multiple of {}",
                    entry.name,
                    payload.len(),
                    entry_bytes
                )));
            }
            let k = payload.len() / entry_bytes;
            let (idx_bytes, val_bytes) = payload.split_at(k * 4);
            let mut indices = Vec::with_capacity(k);
            for c in idx_bytes.chunks_exact(4) {
                indices.push(u32::from_le_bytes(c.try_into().expect("chunk is 4 bytes")));
            }
            for w in indices.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::Corrupt(format!(
                        "tensor {}: COO indices not strictly increasing",
                        entry.name
                    )));
                }
            }
            if let Some(&last) = indices.last() {
                if last as usize >= numel {
                    return Err(Error::Corrupt(format!(
                        "tensor {}: COO index {last} out of bounds for {numel} elements",
                        entry.name
                    )));
                }
            }
            match entry.dtype {
                Dtype::F32 => {
                    let mut out = vec![0.0f32; numel];
                    for (i, c) in indices.iter().zip(val_bytes.chunks_exact(4)) {
                        let v = f32::from_le_bytes(c.try_into().expect("chunk is 4 bytes"));
                        if v == 0.0 {
                            return Err(Error::Corrupt(format!(
                                "tensor {}: COO stores a zero value",
                                entry.name
                            )));
                        }
                        out[*i as usize] = v;
                    }
                    Ok(Values::F32(out))
                }
                Dtype::I8 => {
                    let mut out = vec![0i8; numel];
                    for (i, b) in indices.iter().zip(val_bytes) {
                        let v = *b as i8;
                        if v == 0 {
                            return Err(Error::Corrupt(format!(
                                "tensor {}: COO stores a zero value",
                                entry.name
                            )));
                        }
                        out[*i as usize] = v;
                    }
                    Ok(Values::I8(out))
                }
            }
        }
    }
}

fn model_file(model: &Model, force_dense_f32: bool) -> ModelFile {
    let mut tensors = Vec::new();
    for (i, layer) in model.layers.iter().enumerate() {
        let weight_name = format!("layers.{i}.weight");
        match (&layer.qweights, force_dense_f32) {
            (Some(q), false) => {
                tensors.push(encode_entry(
                    &weight_name,
                    &q.shape,
                    Values::I8(q.data.clone()),
                    Some(QuantView {
                        scale: q.params.scale,
                        zero_point: q.params.zero_point,
                    }),
                ));
            }
            _ => {
                let values = Values::F32(layer.weights.data().to_vec());
                if force_dense_f32 {
                    tensors.push(dense_f32_entry(&weight_name, layer.weights.shape(), values));
                } else {
                    tensors.push(encode_entry(&weight_name, layer.weights.shape(), values, None));
                }
            }
        }
        let bias_name = format!("layers.{i}.bias");
        let bias_values = Values::F32(layer.biases.data().to_vec());
        if force_dense_f32 {
            tensors.push(dense_f32_entry(&bias_name, layer.biases.shape(), bias_values));
        } else {
            tensors.push(encode_entry(&bias_name, layer.biases.shape(), bias_values, None));
        }
        if let Some(mask) = &layer.mask {
            let mask_name = format!("layers.{i}.mask");
            if force_dense_f32 {
                tensors.push(dense_f32_entry(
                    &mask_name,
                    mask.shape(),
                    Values::F32(mask.data().to_vec()),
                ));
            } else {
                let codes: Vec<i8> = mask.data().iter().map(|&m| m as i8).collect();
                tensors.push(encode_entry(&mask_name, mask.shape(), Values::I8(codes), None));
            }
        }
    }
    ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        arch: model.specs(),
        tensors,
        metadata: model.metadata.clone(),
        rounding_mode: ROUNDING_MODE.to_string(),
    }
}

fn dense_f32_entry(name: &str, shape: &[usize], values: Values) -> TensorEntry {
    let v = match values {
        Values::F32(v) => v,
        Values::I8(v) => v.iter().map(|x| *x as f32).collect(),
    };
    let mut bytes = Vec::with_capacity(v.len() * 4);
    for x in &v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    TensorEntry {
        name: name.to_string(),
        shape: shape.to_vec(),
        dtype: Dtype::F32,
        encoding: Encoding::Dense,
        quant: None,
        data: BASE64.encode(bytes),
    }
}

/// Serialized model bytes without touching disk.
pub fn model_bytes(model: &Model) -> Result<Vec<u8>> {
    model.validate()?;
    Ok(serde_json::to_vec(&model_file(model, false))?)
}

/// Saves a model; returns the file size in bytes.
pub fn save_model(model: &Model, path: &Path) -> Result<u64> {
    let bytes = model_bytes(model)?;
    write_atomic(path, &bytes)?;
    Ok(bytes.len() as u64)
}

/// Byte size of the reference all-dense f32 serialization of this model.
pub fn dense_f32_size(model: &Model) -> Result<u64> {
    Ok(serde_json::to_vec(&model_file(model, true))?.len() as u64)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path)?;
    let file: ModelFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Corrupt(format!("{}: not a model file: {e}", path.display())))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: file.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    if file.rounding_mode != ROUNDING_MODE {
        return Err(Error::Corrupt(format!(
            "unknown rounding mode {:?}",
            file.rounding_mode
        )));
    }

    let find = |name: &str| file.tensors.iter().find(|t| t.name == name);
    let mut layers = Vec::with_capacity(file.arch.len());
    for (i, spec) in file.arch.iter().enumerate() {
        let weight_entry = find(&format!("layers.{i}.weight"))
            .ok_or_else(|| Error::Corrupt(format!("missing weight tensor for layer {i}")))?;
        let expect_shape = vec![spec.out_dim, spec.in_dim];
        if weight_entry.shape != expect_shape {
            return Err(Error::Corrupt(format!(
                "layer {i}: weight shape {:?} does not match arch {:?}",
                weight_entry.shape, expect_shape
            )));
        }
        let (weights, qweights) = match decode_entry(weight_entry)? {
            Values::F32(v) => {
                if weight_entry.quant.is_some() {
                    return Err(Error::Corrupt(format!(
                        "layer {i}: f32 weights carry quant params"
                    )));
                }
                (Tensor::new(expect_shape.clone(), v)?, None)
            }
            Values::I8(v) => {
                let quant = weight_entry.quant.ok_or_else(|| {
                    Error::Corrupt(format!("layer {i}: i8 weights without quant params"))
                })?;
                if v.iter().any(|&q| q == -128) {
                    return Err(Error::Corrupt(format!(
                        "layer {i}: weight code -128 outside the symmetric range"
                    )));
                }
                let q = QuantizedTensor {
                    shape: expect_shape.clone(),
                    data: v,
                    params: QuantParams {
                        scale: quant.scale,
                        zero_point: quant.zero_point,
                        role: QuantRole::Weight,
                    },
                };
                q.params.validate()?;
                (dequantize(&q), Some(q))
            }
        };

        let bias_entry = find(&format!("layers.{i}.bias"))
            .ok_or_else(|| Error::Corrupt(format!("missing bias tensor for layer {i}")))?;
        let biases = match decode_entry(bias_entry)? {
            Values::F32(v) => Tensor::new(bias_entry.shape.clone(), v)?,
            Values::I8(_) => {
                return Err(Error::Corrupt(format!("layer {i}: biases must be f32")));
            }
        };

        let mask = match find(&format!("layers.{i}.mask")) {
            None => None,
            Some(entry) => {
                let values = match decode_entry(entry)? {
                    Values::I8(v) => v.iter().map(|&x| x as f32).collect::<Vec<f32>>(),
                    Values::F32(v) => v,
                };
                Some(Tensor::new(entry.shape.clone(), values)?)
            }
        };

        layers.push(Layer {
            spec: *spec,
            weights,
            biases,
            mask,
            qweights,
        });
    }

    let mut metadata = file.metadata;
    if let Some(act) = &mut metadata.activation_quant {
        for p in act.iter_mut() {
            p.role = QuantRole::Activation;
            p.validate()?;
        }
    }

    let model = Model { layers, metadata };
    model
        .validate()
        .map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub kind: DatasetKind,
    pub noise: f64,
    pub seed: u64,
}

/// Sidecar JSON written next to the binary dataset; records the split
/// boundaries (and generation provenance, when known).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub sha256: String,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub splits: SplitRanges,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<DatasetProvenance>,
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".splits.json");
    std::path::PathBuf::from(s)
}

/// Writes the binary dataset and its sidecar; returns the content hash.
pub fn save_dataset(
    dataset: &Dataset,
    provenance: Option<DatasetProvenance>,
    path: &Path,
) -> Result<String> {
    dataset.validate()?;
    let n = dataset.n_samples();
    let d = dataset.n_features();
    let mut bytes = Vec::with_capacity(20 + 4 * n * d + 2 * n);
    bytes.extend_from_slice(&DATASET_MAGIC);
    bytes.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    bytes.extend_from_slice(&(dataset.n_classes as u32).to_le_bytes());
    for v in dataset.features.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for l in &dataset.labels {
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    let sha256 = hex_digest(&bytes);
    write_atomic(path, &bytes)?;
    save_json(
        &DatasetSidecar {
            sha256: sha256.clone(),
            n_samples: n,
            n_features: d,
            n_classes: dataset.n_classes,
            splits: dataset.splits,
            provenance,
        },
        &sidecar_path(path),
    )?;
    Ok(sha256)
}

/// Loads a dataset and returns it with its content hash. The header, the
/// payload lengths and the sidecar must all be consistent.
pub fn load_dataset(path: &Path) -> Result<(Dataset, String)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 20 || bytes[..4] != DATASET_MAGIC {
        return Err(Error::Corrupt(format!(
            "{}: not a dataset file",
            path.display()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("bounds checked"));
    let version = word(4);
    if version != DATASET_VERSION {
        return Err(Error::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let n = word(8) as usize;
    let d = word(12) as usize;
    let n_classes = word(16) as usize;
    let expected = 20 + 4 * n * d + 2 * n;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "{}: {} bytes, header implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let mut features = Vec::with_capacity(n * d);
    let mut off = 20;
    for _ in 0..n * d {
        features.push(f32::from_le_bytes(
            bytes[off..off + 4].try_into().expect("bounds checked"),
        ));
        off += 4;
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(u16::from_le_bytes(
            bytes[off..off + 2].try_into().expect("bounds checked"),
        ));
        off += 2;
    }
    let sha256 = hex_digest(&bytes);

    let sidecar: DatasetSidecar = load_json(&sidecar_path(path)).map_err(|e| {
        Error::Corrupt(format!(
            "{}: missing or invalid sidecar: {e}",
            path.display()
        ))
    })?;
    if sidecar.n_samples != n || sidecar.n_features != d || sidecar.n_classes != n_classes {
        return Err(Error::Corrupt(format!(
            "{}: sidecar disagrees with the binary header",
            path.display()
        )));
    }
    if sidecar.sha256 != sha256 {
        return Err(Error::Corrupt(format!(
            "{}: content hash mismatch (sidecar {}, actual {sha256})",
            path.display(),
            sidecar.sha256
        )));
    }

    let dataset = Dataset {
        features: Tensor::new(vec![n, d], features)?,
        labels,
        n_classes,
        splits: sidecar.splits,
    };
    dataset
        .validate()
        .map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
    Ok((dataset, sha256))
}

/// SHA-256 content hash of any file.
pub fn file_fingerprint(path: &Path) -> Result<String> {
    Ok(hex_digest(&fs::read(path)?))
}

/// Generates a synthetic dataset and writes it (binary + sidecar).
pub fn gen_dataset(
    kind: DatasetKind,
    n_samples: usize,
    n_classes: usize,
    noise: f64,
    seed: u64,
    path: &Path,
) -> Result<(Dataset, String)> {
    let dataset = crate::data::generate(kind, n_samples, n_classes, noise, seed)?;
    let sha = save_dataset(
        &dataset,
        Some(DatasetProvenance { kind, noise, seed }),
        path,
    )?;
    Ok((dataset, sha))
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// deployment manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployedModel {
    pub model_id: String,
    pub path: String,
}

/// Which models an ensemble selection deploys, and how it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentManifest {
    pub strategy: String,
    pub k: usize,
    pub model_ids: Vec<String>,
    pub models: Vec<DeployedModel>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, DatasetKind};
    use crate::nn::Activation;
    use crate::prune::build_mask;
    use crate::quant::{calibrate_weight_params, quantize};
    use tempfile::tempdir;

    fn small_model(seed: u64) -> Model {
        Model::new(
            &[
                LayerSpec::new(3, 8, Activation::Relu),
                LayerSpec::new(8, 2, Activation::SoftmaxOutput),
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn float_model_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = small_model(1);
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model, loaded);
        let out = model
            .forward(&Tensor::from_rows(1, 3, vec![0.2, -0.4, 1.0]).unwrap())
            .unwrap();
        let out2 = loaded
            .forward(&Tensor::from_rows(1, 3, vec![0.2, -0.4, 1.0]).unwrap())
            .unwrap();
        assert_eq!(out, out2);
    }

    #[test]
    fn pruned_quantized_model_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut model = small_model(2);
        for layer in &mut model.layers {
            let mask = build_mask(&layer.weights, 0.9);
            for (w, &m) in layer.weights.data_mut().iter_mut().zip(mask.data()) {
                if m == 0.0 {
                    *w = 0.0;
                }
            }
            layer.mask = Some(mask);
            let params = calibrate_weight_params(&layer.weights);
            let q = quantize(&layer.weights, &params);
            layer.weights = dequantize(&q);
            layer.qweights = Some(q);
        }
        model.metadata.sparsity = model.layers.iter().map(|l| l.weights.sparsity() as f32).collect();
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model, loaded);

        // Saving the loaded model again produces identical bytes.
        let path2 = dir.path().join("m2.json");
        save_model(&loaded, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn dense_payload_is_4_bytes_per_value() {
        let entry = encode_entry(
            "t",
            &[32, 32],
            Values::F32((0..1024).map(|i| i as f32 + 1.0).collect()),
            None,
        );
        assert_eq!(entry.encoding, Encoding::Dense);
        assert_eq!(BASE64.decode(&entry.data).unwrap().len(), 4096);
    }

    #[test]
    fn sparse_i8_payload_is_5_bytes_per_kept_value() {
        // 1024 entries at 90% sparsity: 103 kept, 5 bytes each.
        let mut values = vec![0i8; 1024];
        for (i, v) in values.iter_mut().enumerate().take(103) {
            *v = (i % 100 + 1) as i8;
        }
        let entry = encode_entry("t", &[32, 32], Values::I8(values), None);
        assert_eq!(entry.encoding, Encoding::SparseCoo);
        let payload = BASE64.decode(&entry.data).unwrap();
        assert_eq!(payload.len(), 515);
        // ~12.6% of the 4096-byte dense f32 payload.
        assert!((payload.len() as f64 / 4096.0) < 0.13);
    }

    #[test]
    fn i8_below_its_threshold_stays_dense() {
        // 70% sparsity: COO would cost 0.3 * 5 = 1.5 bytes/entry vs 1 dense.
        let mut values = vec![0i8; 1000];
        for (i, v) in values.iter_mut().enumerate().take(300) {
            *v = 1 + (i % 5) as i8;
        }
        let entry = encode_entry("t", &[1000], Values::I8(values), None);
        assert_eq!(entry.encoding, Encoding::Dense);
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&small_model(3), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut file: serde_json::Value = serde_json::from_str(&text).unwrap();
        let data = file["tensors"][0]["data"].as_str().unwrap().to_string();
        file["tensors"][0]["data"] = serde_json::Value::String(data[..data.len() - 8].to_string());
        fs::write(&path, serde_json::to_vec(&file).unwrap()).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Corrupt(_))));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&small_model(4), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut file: serde_json::Value = serde_json::from_str(&text).unwrap();
        file["format_version"] = serde_json::Value::from(2);
        fs::write(&path, serde_json::to_vec(&file).unwrap()).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn unsorted_coo_indices_are_corrupt() {
        let entry = TensorEntry {
            name: "t".into(),
            shape: vec![4],
            dtype: Dtype::I8,
            encoding: Encoding::SparseCoo,
            quant: None,
            data: BASE64.encode([2u8, 0, 0, 0, 1, 0, 0, 0, 7, 7]),
        };
        assert!(matches!(decode_entry(&entry), Err(Error::Corrupt(_))));
    }

    #[test]
    fn dataset_round_trips_with_stable_hash() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.p2ed");
        let dataset = generate(DatasetKind::Blobs, 250, 4, 0.5, 7).unwrap();
        let sha1 = save_dataset(&dataset, None, &path).unwrap();
        let (loaded, sha2) = load_dataset(&path).unwrap();
        assert_eq!(dataset, loaded);
        assert_eq!(sha1, sha2);

        let path_b = dir.path().join("d2.p2ed");
        let (_, sha3) = gen_dataset(DatasetKind::Blobs, 250, 4, 0.5, 7, &path_b).unwrap();
        // Same generation parameters, same bytes, same hash.
        assert_eq!(file_fingerprint(&path).unwrap(), sha3);
    }

    #[test]
    fn corrupt_dataset_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.p2ed");
        let dataset = generate(DatasetKind::Blobs, 50, 2, 0.5, 1).unwrap();
        save_dataset(&dataset, None, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Corrupt(_))));
    }
}
