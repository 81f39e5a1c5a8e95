//! Parameter checkpoints: a JSON manifest plus a raw little-endian blob.

use std::fs;
use std::path::{Path, PathBuf};

use flownet_core::data::{NormStats, SplitSpec};
use flownet_core::diff::{ParamStore, Tensor};
use flownet_core::flow::ModelConfig;
use flownet_core::stack::FlowNet;
use flownet_core::{DType, Scalar};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: DType,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub nodes: usize,
    pub tensors: Vec<TensorEntry>,
    pub config: ModelConfig,
    #[serde(default)]
    pub norm: Option<NormStats>,
    #[serde(default)]
    pub split: Option<SplitSpec>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub nodes: usize,
    pub norm: Option<NormStats>,
    pub split: Option<SplitSpec>,
    pub params: ParamStore<T>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Expected `(name, shape)` list for a model of `nodes` nodes.
pub fn expected_shapes(config: &ModelConfig, nodes: usize) -> Result<Vec<(String, Vec<usize>)>> {
    let net = FlowNet::<f64>::new(config.clone(), &Tensor::zeros(&[nodes, nodes]))?;
    Ok(net.param_specs().into_iter().map(|s| (s.name, s.shape)).collect())
}

/// Writes `path` (manifest) and its sibling `.bin` blob in `T`'s precision.
pub fn save_checkpoint<T: Scalar>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    if let Some((name, _)) = ckpt.params.iter().find(|(_, t)| !t.all_finite()) {
        return Err(CliError::Checkpoint(format!("refusing to save non-finite tensor `{name}`")));
    }
    let width = T::DTYPE.width();
    let mut blob = Vec::with_capacity(ckpt.params.numel() * width);
    let mut tensors = Vec::with_capacity(ckpt.params.len());
    for (name, t) in ckpt.params.iter() {
        tensors.push(TensorEntry { name: name.to_owned(), shape: t.shape().to_vec(), offset: blob.len() });
        for &v in t.data() {
            v.write_le(&mut blob);
        }
    }
    let blob_file = blob_path(path);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE,
        blob: blob_file.file_name().unwrap().to_string_lossy().into_owned(),
        nodes: ckpt.nodes,
        tensors,
        config: ckpt.config.clone(),
        norm: ckpt.norm.clone(),
        split: ckpt.split,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&blob_file, &blob)?;
    fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn decode<T: Scalar>(bytes: &[u8], dtype: DType) -> Vec<T> {
    match dtype {
        DType::Fp32 => bytes.chunks(4).map(|b| T::lit(f32::read_le(b) as f64)).collect(),
        DType::Fp64 => bytes.chunks(8).map(|b| T::lit(f64::read_le(b))).collect(),
    }
}

/// Reads and validates a checkpoint; tensors are converted to `T` if stored
/// at another precision.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Checkpoint(format!("bad manifest: {e}")))?;
    if m.format_version != FORMAT_VERSION {
        return Err(CliError::Checkpoint(format!("unsupported format version {}", m.format_version)));
    }
    let blob_file = path.parent().unwrap_or(Path::new(".")).join(&m.blob);
    let blob = fs::read(&blob_file).map_err(|e| CliError::Missing(format!("{}: {e}", blob_file.display())))?;

    let expected = expected_shapes(&m.config, m.nodes)?;
    for e in &m.tensors {
        match expected.iter().find(|(n, _)| *n == e.name) {
            None => return Err(CliError::Checkpoint(format!("manifest lists tensor `{}` absent from the config", e.name))),
            Some((_, shape)) if *shape != e.shape => {
                return Err(CliError::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, config expects {:?}",
                    e.name, e.shape, shape
                )))
            }
            _ => {}
        }
    }
    if let Some((n, _)) = expected.iter().find(|(n, _)| !m.tensors.iter().any(|e| e.name == *n)) {
        return Err(CliError::Checkpoint(format!("tensor `{n}` is missing from the manifest")));
    }

    let width = m.dtype.width();
    let mut params = ParamStore::new();
    let mut cursor = 0;
    for e in &m.tensors {
        if e.offset != cursor {
            return Err(CliError::Checkpoint(format!("tensor `{}` starts at byte {}, expected {cursor}", e.name, e.offset)));
        }
        let len = e.shape.iter().product::<usize>() * width;
        if cursor + len > blob.len() {
            return Err(CliError::Checkpoint(format!(
                "blob truncated: tensor `{}` needs bytes {cursor}..{} but the blob has {}",
                e.name,
                cursor + len,
                blob.len()
            )));
        }
        let data = decode::<T>(&blob[cursor..cursor + len], m.dtype);
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
        cursor += len;
    }
    if cursor != blob.len() {
        return Err(CliError::Checkpoint(format!("blob has {} trailing bytes", blob.len() - cursor)));
    }
    Ok(Checkpoint { config: m.config, nodes: m.nodes, norm: m.norm, split: m.split, params })
}

/// Precision recorded in a manifest, without loading the blob.
pub fn checkpoint_dtype(path: &Path) -> Result<DType> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Checkpoint(format!("bad manifest: {e}")))?;
    Ok(m.dtype)
}

/// Manifest for loose tensors that belong to no model, such as ground-truth
/// transfers of a synthetic system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub format_version: u32,
    pub dtype: DType,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_tensors(path: &Path, tensors: &[(&str, &Tensor<f64>)]) -> Result<()> {
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in tensors {
        entries.push(TensorEntry { name: (*name).to_owned(), shape: t.shape().to_vec(), offset: blob.len() });
        t.data().iter().for_each(|v| v.write_le(&mut blob));
    }
    let blob_file = blob_path(path);
    let m = BundleManifest {
        format_version: FORMAT_VERSION,
        dtype: DType::Fp64,
        blob: blob_file.file_name().unwrap().to_string_lossy().into_owned(),
        tensors: entries,
    };
    fs::write(&blob_file, &blob)?;
    fs::write(path, serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
    let m: BundleManifest = serde_json::from_str(&text).map_err(|e| CliError::Checkpoint(format!("bad manifest: {e}")))?;
    let blob = fs::read(path.parent().unwrap_or(Path::new(".")).join(&m.blob))?;
    let width = m.dtype.width();
    let mut out = Vec::new();
    for e in &m.tensors {
        let len = e.shape.iter().product::<usize>() * width;
        let bytes = blob
            .get(e.offset..e.offset + len)
            .ok_or_else(|| CliError::Checkpoint(format!("blob truncated: tensor `{}` is incomplete", e.name)))?;
        out.push((e.name.clone(), Tensor::new(e.shape.clone(), decode::<f64>(bytes, m.dtype))?));
    }
    Ok(out)
}
