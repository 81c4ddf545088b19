use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::fsio::atomic_write;
use crate::numerics::{DType, ParamStore, Scalar, Tensor};

use super::ModelError;

pub const MAGIC: &[u8; 4] = b"LUKE";
pub const VERSION: u32 = 1;
const METADATA_KEY: &str = "__metadata__";
const MAX_HEADER: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    dtype: DType,
    shape: Vec<usize>,
    offsets: [u64; 2],
}

/// Named tensors plus a free-form metadata object, stored as
/// `LUKE | u32 version | u64 header length | JSON header | payload`.
/// Tensors are laid out in name order so equal contents give equal bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub metadata: Map<String, Value>,
    pub tensors: BTreeMap<String, Tensor<T>>,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(metadata: Map<String, Value>) -> Self {
        Self { metadata, tensors: BTreeMap::new() }
    }

    /// Copies every tensor of `store`, optionally under a name prefix.
    pub fn add_store(&mut self, store: &ParamStore<T>, prefix: &str) {
        for (_, name, t) in store.iter() {
            self.tensors.insert(format!("{prefix}{name}"), t.clone());
        }
    }

    /// Tensors whose names start with `prefix`, with the prefix removed, in
    /// name order.
    pub fn store_with_prefix(&self, prefix: &str) -> ParamStore<T> {
        let mut s = ParamStore::new();
        for (name, t) in &self.tensors {
            if let Some(rest) = name.strip_prefix(prefix) {
                s.insert(rest, t.clone()).expect("names are unique");
            }
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = Map::new();
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            let start = payload.len() as u64;
            for &v in t.data() {
                v.write_le(&mut payload);
            }
            let entry = Entry { dtype: T::DTYPE, shape: t.shape().to_vec(), offsets: [start, payload.len() as u64] };
            header.insert(name.clone(), serde_json::to_value(entry).expect("entry serializes"));
        }
        header.insert(METADATA_KEY.to_string(), Value::Object(self.metadata.clone()));
        let header = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    /// Parses and fully validates a checkpoint; tensors stored at another
    /// precision are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 16 {
            return Err(corrupt(format!("file is {} bytes, shorter than the 16-byte preamble", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        if header_len > MAX_HEADER || header_len > (bytes.len() - 16) as u64 {
            return Err(corrupt(format!("header length {header_len} exceeds file size")));
        }
        let header_end = 16 + header_len as usize;
        let header: Map<String, Value> = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| corrupt(format!("header: {e}")))?;
        let payload = &bytes[header_end..];

        let mut metadata = Map::new();
        let mut entries: Vec<(String, Entry)> = Vec::new();
        for (name, v) in header {
            if name == METADATA_KEY {
                metadata = match v {
                    Value::Object(m) => m,
                    _ => return Err(corrupt("metadata must be an object")),
                };
                continue;
            }
            let entry: Entry = serde_json::from_value(v).map_err(|e| corrupt(format!("tensor `{name}`: {e}")))?;
            entries.push((name, entry));
        }
        entries.sort_by_key(|(_, e)| e.offsets[0]);
        let mut cursor = 0u64;
        let mut tensors = BTreeMap::new();
        for (name, e) in entries {
            let [start, end] = e.offsets;
            if start != cursor || end < start || end > payload.len() as u64 {
                return Err(corrupt(format!("tensor `{name}` offsets {start}..{end} are not contiguous")));
            }
            let count = e
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| corrupt(format!("tensor `{name}` shape overflows")))?;
            let size = e.dtype.size_bytes();
            if count.checked_mul(size) != Some((end - start) as usize) {
                return Err(corrupt(format!("tensor `{name}` byte length disagrees with shape {:?}", e.shape)));
            }
            let raw = &payload[start as usize..end as usize];
            let data: Vec<T> = match e.dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
                DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
            };
            tensors.insert(name, Tensor::new(e.shape, data)?);
            cursor = end;
        }
        if cursor != payload.len() as u64 {
            return Err(corrupt(format!("{} trailing payload bytes", payload.len() as u64 - cursor)));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        atomic_write(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
