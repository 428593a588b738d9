//! Single-file checkpoints.
//!
//! Layout:
//!
//! ```text
//! b"CNTRCKPT"          8-byte magic
//! u64 (little endian)  manifest length in bytes
//! manifest             UTF-8 JSON, see [`Manifest`]
//! payload              raw little-endian tensor data
//! ```
//!
//! Tensor offsets in the manifest are relative to the start of the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::param::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CNTRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub layer_id: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Number of completed epochs.
    pub epoch: usize,
    pub tensors: Vec<TensorEntry>,
    /// Caller-defined metadata (model specs, schedule, logs, ...).
    pub meta: serde_json::Value,
}

fn dtype_size(dtype: &str) -> Result<usize> {
    match dtype {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => Err(NnError::Format(format!("unsupported dtype {other}"))),
    }
}

#[derive(Debug)]
pub struct CheckpointWriter {
    epoch: usize,
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl CheckpointWriter {
    pub fn new(epoch: usize) -> Self {
        Self {
            epoch,
            entries: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn add_tensor<T: Real>(&mut self, name: &str, layer_id: &str, t: &Tensor<T>) -> Result<()> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(NnError::Usage(format!("duplicate checkpoint tensor {name}")));
        }
        let offset = self.payload.len();
        for &v in t.data() {
            match T::DTYPE {
                "f32" => self
                    .payload
                    .extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes()),
                _ => self
                    .payload
                    .extend_from_slice(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes()),
            }
        }
        self.entries.push(TensorEntry {
            name: name.to_string(),
            layer_id: layer_id.to_string(),
            shape: t.shape().to_vec(),
            dtype: T::DTYPE.to_string(),
            offset,
            nbytes: self.payload.len() - offset,
        });
        Ok(())
    }

    /// Adds every parameter of `store` under `prefix + name`.
    pub fn add_params<T: Real>(&mut self, prefix: &str, store: &ParamStore<T>) -> Result<()> {
        for (_, p) in store.iter() {
            self.add_tensor(&format!("{prefix}{}", p.name), &p.layer_id, &p.value)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self, meta: serde_json::Value) -> Result<Vec<u8>> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            epoch: self.epoch,
            tensors: self.entries.clone(),
            meta,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + json.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Writes atomically through a temporary sibling file.
    pub fn write(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        let bytes = self.to_bytes(meta)?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    payload: Vec<u8>,
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(fs::read(path)?)
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(NnError::Format("missing checkpoint magic".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let end = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| NnError::Format("manifest length exceeds file size".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..end])?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(NnError::Format(format!(
                "unsupported checkpoint version {}",
                manifest.format_version
            )));
        }
        let payload = bytes[end..].to_vec();
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            if n * dtype_size(&e.dtype)? != e.nbytes || e.offset + e.nbytes > payload.len() {
                return Err(NnError::Format(format!("tensor {} is truncated", e.name)));
            }
        }
        Ok(Self { manifest, payload })
    }

    pub fn entry(&self, name: &str) -> Option<&TensorEntry> {
        self.manifest.tensors.iter().find(|e| e.name == name)
    }

    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self
            .entry(name)
            .ok_or_else(|| NnError::Format(format!("checkpoint has no tensor {name}")))?;
        if e.dtype != T::DTYPE {
            return Err(NnError::Format(format!(
                "tensor {name} is {}, requested {}",
                e.dtype,
                T::DTYPE
            )));
        }
        let raw = &self.payload[e.offset..e.offset + e.nbytes];
        let data = match T::DTYPE {
            "f32" => raw
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect(),
            _ => raw
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
        };
        Tensor::new(&e.shape, data)
    }

    /// Overwrites every parameter of `store` from tensors named `prefix + name`.
    pub fn load_params<T: Real>(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        for p in store.iter_mut() {
            let t = self.tensor::<T>(&format!("{prefix}{}", p.name))?;
            if t.shape() != p.value.shape() {
                return Err(NnError::Format(format!(
                    "parameter {} has shape {:?} in checkpoint, {:?} in model",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t;
        }
        Ok(())
    }
}
