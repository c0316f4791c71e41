//! Checkpoint container.
//!
//! Layout: the 8-byte magic `ACTCKPT\n`, a little-endian `u64` manifest
//! length, the UTF-8 JSON manifest, then every tensor's `f64` values as
//! little-endian bytes at the manifest's offsets (relative to the blob start).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ACTCKPT\n";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Named tensors plus an arbitrary JSON configuration block.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(config: serde_json::Value, store: &ParamStore) -> Self {
        Checkpoint {
            config,
            tensors: store
                .iter()
                .map(|(_, n, t)| (n.to_string(), Tensor::from_parts(t.shape().to_vec(), t.data().to_vec())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f64".into(),
                offset,
            });
            offset += 8 * t.numel() as u64;
        }
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(origin, m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16 + len)
            .ok_or_else(|| bad("truncated manifest".into()))?;
        let raw: serde_json::Value =
            serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
        let version = raw.get("format_version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(bad(format!(
                "unsupported checkpoint format version {version:?} (this build reads {CHECKPOINT_VERSION})"
            )));
        }
        let manifest: Manifest =
            serde_json::from_value(raw).map_err(|e| bad(format!("manifest: {e}")))?;
        let blob = &bytes[16 + len..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            if e.dtype != "f64" {
                return Err(bad(format!("tensor {}: unsupported dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = blob
                .get(start..start + 8 * n)
                .ok_or_else(|| bad(format!("tensor {} runs past the end of the file", e.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(&e.shape, data).map_err(|err| bad(format!("tensor {}: {err}", e.name)))?;
            tensors.push((e.name, t));
        }
        Ok(Checkpoint {
            config: manifest.config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Collects every tensor into a parameter store.
    pub fn to_store(&self) -> ParamStore {
        let mut s = ParamStore::new();
        for (n, t) in &self.tensors {
            s.insert(n.clone(), t.clone());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: serde_json::json!({"k": 1}),
            tensors: vec![
                ("a".into(), Tensor::new(&[2, 2], vec![1.0, -2.5, 3.25, 1e-300]).unwrap()),
                ("b".into(), Tensor::scalar(f64::MIN_POSITIVE)),
            ],
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back.config, c.config);
        assert_eq!(back.tensors, c.tensors);
    }

    #[test]
    fn newer_version_rejected() {
        let mut bytes = sample().to_bytes();
        let pos = bytes
            .windows(18)
            .position(|w| w == b"\"format_version\":1")
            .unwrap();
        bytes[pos + 17] = b'2';
        let err = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("unsupported checkpoint format version"));
    }

    #[test]
    fn garbage_rejected() {
        assert!(Checkpoint::from_bytes(b"hello world, not a file", Path::new("x")).is_err());
        let mut bytes = sample().to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::from_bytes(&bytes, Path::new("x")).is_err());
    }
}
