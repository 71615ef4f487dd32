//! Tensor file format.
//!
//! Byte layout (all integers little-endian):
//!
//! | offset   | size | content                                        |
//! |----------|------|------------------------------------------------|
//! | 0        | 8    | magic `BASTTNSR`                               |
//! | 8        | 4    | format version, `u32` (currently 1)            |
//! | 12       | 8    | manifest length `L` in bytes, `u64`            |
//! | 20       | L    | manifest, UTF-8 JSON                           |
//! | 20 + L   | 4·n  | payload: `f32` values, tensors back to back    |
//!
//! The manifest is `{"meta": {string: string}, "tensors": [{"name",
//! "shape", "offset"}]}` where `offset` counts `f32` elements from the start
//! of the payload. Tensors are stored in manifest order, row-major.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"BASTTNSR";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    meta: BTreeMap<String, String>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// In-memory image of a tensor file: string metadata plus named `f32` tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    pub meta: BTreeMap<String, String>,
    tensors: Vec<(String, Tensor<f32>)>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Appends a tensor, converting it to `f32`.
    pub fn push<T: Float>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(TensorError::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        self.tensors.push((name, tensor.cast()));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.numel();
                e
            })
            .collect();
        let manifest = Manifest {
            meta: self.meta.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest)
            .map_err(|e| TensorError::Checkpoint(format!("manifest encoding: {e}")))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, t) in &self.tensors {
            for x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = usize::try_from(u64::from_le_bytes(len))
            .map_err(|_| TensorError::Checkpoint("manifest too large".into()))?;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let manifest: Manifest = serde_json::from_slice(&json)
            .map_err(|e| TensorError::Checkpoint(format!("manifest decoding: {e}")))?;

        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() % 4 != 0 {
            return Err(TensorError::Checkpoint("truncated payload".into()));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let n: usize = e.shape.iter().product();
            let slice = values.get(e.offset..e.offset + n).ok_or_else(|| {
                TensorError::Checkpoint(format!("tensor `{}` exceeds payload", e.name))
            })?;
            tensors.push((e.name, Tensor::new(e.shape, slice.to_vec())?));
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut f = TensorFile::new().with_meta("k", "v");
        f.push("a", &Tensor::<f32>::new([2], vec![1.0, -2.0]).unwrap()).unwrap();
        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let payload = &bytes[20 + len..];
        assert_eq!(payload, [1.0f32.to_le_bytes(), (-2.0f32).to_le_bytes()].concat());
    }

    #[test]
    fn rejects_garbage() {
        assert!(TensorFile::read_from(&b"NOTATENSORFILE......"[..]).is_err());
    }

    #[test]
    fn truncated_payload_is_error() {
        let mut f = TensorFile::new();
        f.push("a", &Tensor::<f32>::zeros([4])).unwrap();
        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(TensorFile::read_from(&bytes[..]).is_err());
    }
}
