//! Model directories: a JSON manifest plus one raw tensor file per parameter.
//!
//! Tensor files hold little-endian `f32` values in row-major order. The
//! manifest records each file's shape and SHA-256; loading verifies both.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::layer::{LayerSpec, ModelGraph};
use crate::nn::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "xbar-guard-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRef {
    pub file: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerDescriptor {
    Linear {
        in_features: usize,
        out_features: usize,
        weights: TensorRef,
        bias: TensorRef,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
        kernels: TensorRef,
        bias: TensorRef,
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerDescriptor>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_tensor(dir: &Path, file: String, t: &Tensor) -> Result<TensorRef> {
    let mut bytes = Vec::with_capacity(4 * t.len());
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let path = dir.join(&file);
    fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
    Ok(TensorRef {
        file,
        shape: t.shape().to_vec(),
        sha256: sha256_hex(&bytes),
    })
}

fn read_tensor(dir: &Path, r: &TensorRef) -> Result<Tensor> {
    if r.file.contains(['/', '\\']) || r.file == ".." {
        return Err(Error::format(
            dir.join(MANIFEST_FILE),
            format!("tensor file {:?} must be a bare name", r.file),
        ));
    }
    let path = dir.join(&r.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let count = r
        .shape
        .iter()
        .try_fold(1u64, |acc, d| acc.checked_mul(*d as u64))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(&path, "declared shape overflows"))?;
    if bytes.len() as u64 != count {
        return Err(Error::Length {
            path,
            expected: count,
            actual: bytes.len() as u64,
        });
    }
    let actual = sha256_hex(&bytes);
    if actual != r.sha256 {
        return Err(Error::Checksum {
            path,
            expected: r.sha256.clone(),
            actual,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(r.shape.clone(), data)
}

/// Writes `model` into `dir` (created if missing).
pub fn save_model(model: &ModelGraph, dir: impl AsRef<Path>) -> Result<ModelManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let desc = match layer {
            LayerSpec::Linear {
                in_features,
                out_features,
                weights,
                bias,
            } => LayerDescriptor::Linear {
                in_features: *in_features,
                out_features: *out_features,
                weights: write_tensor(dir, format!("layer{i}.weights.f32"), weights)?,
                bias: write_tensor(dir, format!("layer{i}.bias.f32"), bias)?,
            },
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kh,
                kw,
                stride,
                padding,
                kernels,
                bias,
            } => LayerDescriptor::Conv2d {
                in_ch: *in_ch,
                out_ch: *out_ch,
                kh: *kh,
                kw: *kw,
                stride: *stride,
                padding: *padding,
                kernels: write_tensor(dir, format!("layer{i}.kernels.f32"), kernels)?,
                bias: write_tensor(dir, format!("layer{i}.bias.f32"), bias)?,
            },
            LayerSpec::Relu => LayerDescriptor::Relu,
            LayerSpec::MaxPool2d { size, stride } => LayerDescriptor::MaxPool2d {
                size: *size,
                stride: *stride,
            },
            LayerSpec::Flatten => LayerDescriptor::Flatten,
        };
        layers.push(desc);
    }
    let manifest = ModelManifest {
        format: MANIFEST_FORMAT.into(),
        name: model.name.clone(),
        input_shape: model.input_shape.clone(),
        layers,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a model directory, verifying every tensor's length, checksum and
/// agreement with the layer dimensions.
pub fn load_model(dir: impl AsRef<Path>) -> Result<ModelGraph> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::format(
            &path,
            format!("unsupported manifest format {:?}", manifest.format),
        ));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for desc in &manifest.layers {
        layers.push(match desc {
            LayerDescriptor::Linear {
                in_features,
                out_features,
                weights,
                bias,
            } => LayerSpec::Linear {
                in_features: *in_features,
                out_features: *out_features,
                weights: read_tensor(dir, weights)?,
                bias: read_tensor(dir, bias)?,
            },
            LayerDescriptor::Conv2d {
                in_ch,
                out_ch,
                kh,
                kw,
                stride,
                padding,
                kernels,
                bias,
            } => LayerSpec::Conv2d {
                in_ch: *in_ch,
                out_ch: *out_ch,
                kh: *kh,
                kw: *kw,
                stride: *stride,
                padding: *padding,
                kernels: read_tensor(dir, kernels)?,
                bias: read_tensor(dir, bias)?,
            },
            LayerDescriptor::Relu => LayerSpec::Relu,
            LayerDescriptor::MaxPool2d { size, stride } => LayerSpec::MaxPool2d {
                size: *size,
                stride: *stride,
            },
            LayerDescriptor::Flatten => LayerSpec::Flatten,
        });
    }
    ModelGraph::new(manifest.name, manifest.input_shape, layers)
}
