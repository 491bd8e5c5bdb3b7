//! Toy checkpoint format and sparse upcycling.
//!
//! A checkpoint is a directory holding `manifest.json` plus one flat
//! little-endian binary blob per tensor (f64 by default, f32 accepted on
//! read). Dense checkpoints carry per-layer FFN weights and arbitrary
//! extra tensors (attention, norms); upcycling wraps every FFN in a MoE
//! block — one frozen shared FFN replica, zero-initialised `W_up` so the
//! forward pass is unchanged, small seeded-random `W_down` and router —
//! and copies every other tensor verbatim.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layer::{Activation, ExpertAdapter, MoeLayer, MoeLayerSpec, RouterWeights, SharedFfn};
use super::MoeError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Standard deviation of the seeded random init for `W_down` and the
/// router rows.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Dense,
    Moe,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoeManifestInfo {
    pub n_experts: usize,
    pub top_k: usize,
    pub d_adapter: usize,
    pub sigma: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub dtype: Dtype,
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moe: Option<MoeManifestInfo>,
    pub tensors: Vec<TensorEntry>,
}

fn read_tensor_blob(path: &Path, dtype: Dtype, len: usize) -> Result<Vec<f64>, MoeError> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| MoeError::BadCheckpoint(format!("open {}: {e}", path.display())))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    if bytes.len() != len * width {
        return Err(MoeError::BadCheckpoint(format!(
            "{}: expected {} bytes for {len} values, found {}",
            path.display(),
            len * width,
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(len);
    match dtype {
        Dtype::F32 => {
            for chunk in bytes.chunks_exact(4) {
                out.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
            }
        }
        Dtype::F64 => {
            for chunk in bytes.chunks_exact(8) {
                out.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
    }
    Ok(out)
}

fn write_tensor_blob(path: &Path, values: &[f64]) -> Result<(), MoeError> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Name of a tensor file on disk: the tensor name with `.bin` appended.
fn tensor_file(name: &str) -> String {
    format!("{name}.bin")
}

/// In-memory tensor store keyed by name; shapes kept alongside.
#[derive(Debug, Clone, Default)]
pub struct TensorStore {
    tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl TensorStore {
    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.insert(name.to_string(), (shape, data));
    }

    pub fn insert_matrix(&mut self, name: &str, m: &Array2<f64>) {
        self.insert(name, vec![m.nrows(), m.ncols()], m.iter().copied().collect());
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>, MoeError> {
        let (shape, data) = self
            .tensors
            .get(name)
            .ok_or_else(|| MoeError::BadCheckpoint(format!("missing tensor {name:?}")))?;
        if shape.len() != 2 {
            return Err(MoeError::BadCheckpoint(format!(
                "tensor {name:?} has rank {}, expected 2",
                shape.len()
            )));
        }
        Array2::from_shape_vec((shape[0], shape[1]), data.clone())
            .map_err(|e| MoeError::BadCheckpoint(format!("tensor {name:?}: {e}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.tensors.get(name).map(|(s, d)| (s.as_slice(), d.as_slice()))
    }

    /// Total number of stored values.
    pub fn value_count(&self) -> usize {
        self.tensors.values().map(|(_, d)| d.len()).sum()
    }
}

fn ffn_w1(layer: usize) -> String {
    format!("layers.{layer}.ffn.w1")
}

fn ffn_w2(layer: usize) -> String {
    format!("layers.{layer}.ffn.w2")
}

fn router_name(layer: usize) -> String {
    format!("layers.{layer}.moe.router")
}

fn adapter_down(layer: usize, expert: usize) -> String {
    format!("layers.{layer}.moe.experts.{expert}.w_down")
}

fn adapter_up(layer: usize, expert: usize) -> String {
    format!("layers.{layer}.moe.experts.{expert}.w_up")
}

fn is_moe_tensor(name: &str) -> bool {
    name.contains(".moe.")
}

fn is_ffn_tensor(name: &str) -> bool {
    name.contains(".ffn.")
}

/// A dense stack of FFN sublayers plus whatever extra tensors the
/// checkpoint carries.
#[derive(Debug, Clone)]
pub struct DenseModel {
    pub d_model: usize,
    pub d_ff: usize,
    pub layers: Vec<SharedFfn>,
    /// Non-FFN tensors copied through untouched.
    pub extra: TensorStore,
}

impl DenseModel {
    /// Chained FFN forward through all layers.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>, MoeError> {
        let mut cur = x.to_owned();
        for layer in &self.layers {
            cur = layer.forward(cur.view())?;
        }
        Ok(cur)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(SharedFfn::param_count).sum::<usize>()
            + self.extra.value_count()
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, MoeError> {
        let (manifest, store) = load_store(dir.as_ref())?;
        if manifest.kind != CheckpointKind::Dense {
            return Err(MoeError::BadCheckpoint("expected a dense checkpoint".into()));
        }
        let mut layers = Vec::with_capacity(manifest.n_layers);
        let mut extra = TensorStore::default();
        for l in 0..manifest.n_layers {
            let w1 = store.matrix(&ffn_w1(l))?;
            let w2 = store.matrix(&ffn_w2(l))?;
            if w1.dim() != (manifest.d_model, manifest.d_ff)
                || w2.dim() != (manifest.d_ff, manifest.d_model)
            {
                return Err(MoeError::BadCheckpoint(format!(
                    "layer {l} ffn shapes {:?}/{:?} do not match manifest dims ({}, {})",
                    w1.dim(),
                    w2.dim(),
                    manifest.d_model,
                    manifest.d_ff
                )));
            }
            layers.push(SharedFfn { w1, w2, activation: manifest.activation });
        }
        for name in store.names() {
            if !is_ffn_tensor(name) {
                let (shape, data) = store.get(name).expect("name comes from the store");
                extra.insert(name, shape.to_vec(), data.to_vec());
            }
        }
        Ok(DenseModel { d_model: manifest.d_model, d_ff: manifest.d_ff, layers, extra })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), MoeError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut store = TensorStore::default();
        for (l, ffn) in self.layers.iter().enumerate() {
            store.insert_matrix(&ffn_w1(l), &ffn.w1);
            store.insert_matrix(&ffn_w2(l), &ffn.w2);
        }
        for name in self.extra.names() {
            let (shape, data) = self.extra.get(name).expect("name comes from the store");
            store.insert(name, shape.to_vec(), data.to_vec());
        }
        let manifest = Manifest {
            format_version: 1,
            kind: CheckpointKind::Dense,
            d_model: self.d_model,
            d_ff: self.d_ff,
            n_layers: self.layers.len(),
            dtype: Dtype::F64,
            activation: self.layers.first().map_or(Activation::Silu, |f| f.activation),
            moe: None,
            tensors: Vec::new(),
        };
        save_store(dir, manifest, &store)
    }
}

/// A stack of MoE blocks produced by upcycling, plus the copied extras.
#[derive(Debug, Clone)]
pub struct MoeModel {
    pub d_model: usize,
    pub d_ff: usize,
    pub layers: Vec<MoeLayer>,
    pub extra: TensorStore,
}

impl MoeModel {
    /// Chained block forward; each block routes on its own input.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>, MoeError> {
        let mut cur = x.to_owned();
        for layer in &self.layers {
            cur = layer.forward(cur.view())?;
        }
        Ok(cur)
    }

    pub fn spec(&self) -> Option<MoeLayerSpec> {
        let first = self.layers.first()?;
        Some(MoeLayerSpec {
            d_model: self.d_model,
            d_adapter: first.adapters.first().map_or(0, ExpertAdapter::d_adapter),
            n_experts: first.n_experts(),
            top_k: first.top_k,
            n_layers: self.layers.len(),
        })
    }

    /// All stored parameters: shared FFNs (one replica each), adapters,
    /// routers, extras.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.ffn.param_count() + l.trainable_param_count())
            .sum::<usize>()
            + self.extra.value_count()
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, MoeError> {
        let (manifest, store) = load_store(dir.as_ref())?;
        if manifest.kind != CheckpointKind::Moe {
            return Err(MoeError::BadCheckpoint("expected a MoE checkpoint".into()));
        }
        let info = manifest
            .moe
            .clone()
            .ok_or_else(|| MoeError::BadCheckpoint("MoE checkpoint missing moe info".into()))?;
        let mut layers = Vec::with_capacity(manifest.n_layers);
        let mut extra = TensorStore::default();
        for l in 0..manifest.n_layers {
            let ffn = SharedFfn {
                w1: store.matrix(&ffn_w1(l))?,
                w2: store.matrix(&ffn_w2(l))?,
                activation: manifest.activation,
            };
            let router = RouterWeights { w: store.matrix(&router_name(l))? };
            let adapters = (0..info.n_experts)
                .map(|e| {
                    Ok(ExpertAdapter {
                        w_down: store.matrix(&adapter_down(l, e))?,
                        w_up: store.matrix(&adapter_up(l, e))?,
                    })
                })
                .collect::<Result<Vec<_>, MoeError>>()?;
            layers.push(MoeLayer::new(router, ffn, adapters, info.top_k, info.sigma)?);
        }
        for name in store.names() {
            if !is_ffn_tensor(name) && !is_moe_tensor(name) {
                let (shape, data) = store.get(name).expect("name comes from the store");
                extra.insert(name, shape.to_vec(), data.to_vec());
            }
        }
        Ok(MoeModel { d_model: manifest.d_model, d_ff: manifest.d_ff, layers, extra })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), MoeError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let first = self
            .layers
            .first()
            .ok_or_else(|| MoeError::BadCheckpoint("cannot save an empty model".into()))?;
        let mut store = TensorStore::default();
        for (l, layer) in self.layers.iter().enumerate() {
            store.insert_matrix(&ffn_w1(l), &layer.ffn.w1);
            store.insert_matrix(&ffn_w2(l), &layer.ffn.w2);
            store.insert_matrix(&router_name(l), &layer.router.w);
            for (e, adapter) in layer.adapters.iter().enumerate() {
                store.insert_matrix(&adapter_down(l, e), &adapter.w_down);
                store.insert_matrix(&adapter_up(l, e), &adapter.w_up);
            }
        }
        for name in self.extra.names() {
            let (shape, data) = self.extra.get(name).expect("name comes from the store");
            store.insert(name, shape.to_vec(), data.to_vec());
        }
        let manifest = Manifest {
            format_version: 1,
            kind: CheckpointKind::Moe,
            d_model: self.d_model,
            d_ff: self.d_ff,
            n_layers: self.layers.len(),
            dtype: Dtype::F64,
            activation: first.ffn.activation,
            moe: Some(MoeManifestInfo {
                n_experts: first.n_experts(),
                top_k: first.top_k,
                d_adapter: first.adapters.first().map_or(0, ExpertAdapter::d_adapter),
                sigma: first.sigma,
            }),
            tensors: Vec::new(),
        };
        save_store(dir, manifest, &store)
    }
}

fn load_store(dir: &Path) -> Result<(Manifest, TensorStore), MoeError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let file = std::fs::File::open(&manifest_path)
        .map_err(|e| MoeError::BadCheckpoint(format!("open {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| MoeError::BadCheckpoint(format!("bad manifest: {e}")))?;
    let mut store = TensorStore::default();
    for entry in &manifest.tensors {
        let len: usize = entry.shape.iter().product();
        let data = read_tensor_blob(&dir.join(&entry.file), manifest.dtype, len)?;
        store.insert(&entry.name, entry.shape.clone(), data);
    }
    Ok((manifest, store))
}

fn save_store(dir: &Path, mut manifest: Manifest, store: &TensorStore) -> Result<(), MoeError> {
    for name in store.names() {
        let (shape, data) = store.get(name).expect("name comes from the store");
        let file = tensor_file(name);
        write_tensor_blob(&dir.join(&file), data)?;
        manifest.tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            file,
        });
    }
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| MoeError::BadCheckpoint(format!("manifest serialization: {e}")))?;
    std::fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

/// SHA-256 over the manifest and every tensor blob (sorted by file name);
/// identical checkpoints hash identically.
pub fn checkpoint_hash(dir: impl AsRef<Path>) -> Result<String, MoeError> {
    let dir = dir.as_ref();
    let manifest_bytes = std::fs::read(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| MoeError::BadCheckpoint(format!("bad manifest: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(&manifest_bytes);
    let mut entries = manifest.tensors.clone();
    entries.sort_by(|a, b| a.file.cmp(&b.file));
    for entry in &entries {
        hasher.update(entry.file.as_bytes());
        hasher.update(std::fs::read(dir.join(&entry.file))?);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Options for [`upcycle`]: expert count, activation, and adapter width.
#[derive(Debug, Clone, Copy)]
pub struct UpcycleOptions {
    pub n_experts: usize,
    pub top_k: usize,
    pub d_adapter: usize,
    pub sigma: Activation,
}

/// Wrap every FFN sublayer of a dense model in a MoE block. `W_up` starts
/// at zero so the upcycled forward pass reproduces the dense one exactly;
/// `W_down` and the router are small seeded gaussians. Attention and norm
/// tensors carry over verbatim.
pub fn upcycle(
    dense: &DenseModel,
    opts: &UpcycleOptions,
    seed: u64,
) -> Result<MoeModel, MoeError> {
    let spec = MoeLayerSpec {
        d_model: dense.d_model,
        d_adapter: opts.d_adapter,
        n_experts: opts.n_experts,
        top_k: opts.top_k,
        n_layers: dense.layers.len().max(1),
    };
    spec.validate()?;
    if opts.d_adapter == 0 {
        return Err(MoeError::InvalidSpec("d_adapter must be >= 1".into()));
    }
    if dense.layers.is_empty() {
        return Err(MoeError::BadCheckpoint("dense model has no layers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let d = dense.d_model;
    let mut layers = Vec::with_capacity(dense.layers.len());
    for ffn in &dense.layers {
        let router = RouterWeights {
            w: Array2::from_shape_fn((opts.n_experts, d), |_| normal.sample(&mut rng)),
        };
        let adapters = (0..opts.n_experts)
            .map(|_| ExpertAdapter {
                w_down: Array2::from_shape_fn((d, opts.d_adapter), |_| normal.sample(&mut rng)),
                w_up: Array2::zeros((opts.d_adapter, d)),
            })
            .collect();
        layers.push(MoeLayer::new(router, ffn.clone(), adapters, opts.top_k, opts.sigma)?);
    }
    Ok(MoeModel {
        d_model: dense.d_model,
        d_ff: dense.d_ff,
        layers,
        extra: dense.extra.clone(),
    })
}

/// Build a random dense toy model, the starting point for upcycle demos
/// and tests.
pub fn toy_dense_model(
    n_layers: usize,
    d_model: usize,
    d_ff: usize,
    activation: Activation,
    seed: u64,
) -> DenseModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.4).expect("valid std");
    let layers = (0..n_layers)
        .map(|_| SharedFfn {
            w1: Array2::from_shape_fn((d_model, d_ff), |_| normal.sample(&mut rng)),
            w2: Array2::from_shape_fn((d_ff, d_model), |_| normal.sample(&mut rng)),
            activation,
        })
        .collect();
    let mut extra = TensorStore::default();
    for l in 0..n_layers {
        let norm = vec![1.0; d_model];
        extra.insert(&format!("layers.{l}.norm.scale"), vec![d_model], norm);
    }
    DenseModel { d_model, d_ff, layers, extra }
}
