//! On-disk dataset container: a directory holding `manifest.json` and one
//! binary file per channel.
//!
//! Channel file layout (all integers little-endian):
//!
//! ```text
//! 0..4    magic "AESC"
//! 4       format version
//! 5       dtype code (1 = f32, 2 = f64)
//! 6       ndim
//! 7..16   reserved, zero
//! 16..    ndim x u64 dims, then the row-major IEEE-754 payload
//! ```

use super::{ArrayData, Channel, Dataset, DatasetMetadata, Dtype};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"AESC";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 16;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("dataset {0} not found")]
    NotFound(String),
    #[error("channel {channel} is corrupt: {reason}")]
    CorruptChannel { channel: String, reason: String },
    #[error("manifest is invalid: {0}")]
    Manifest(String),
    #[error("dataset is invalid: {0}")]
    Invalid(#[from] super::DatasetError),
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDescriptor {
    pub name: String,
    pub file: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub units: String,
    pub crc32: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u8,
    pub id: String,
    pub name: String,
    pub channels: Vec<ChannelDescriptor>,
    pub metadata: DatasetMetadata,
}

/// Directory of dataset containers. Ids are `ds-NNNNNN`, allocated
/// sequentially and never reused within a store.
#[derive(Debug)]
pub struct DatasetStore {
    root: PathBuf,
    next: Mutex<u64>,
}

impl DatasetStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut max = 0;
        for entry in fs::read_dir(&root)? {
            let name = entry?.file_name();
            if let Some(n) = name.to_str().and_then(|s| s.strip_prefix("ds-")).and_then(|s| s.parse::<u64>().ok()) {
                max = max.max(n);
            }
        }
        Ok(Self { root, next: Mutex::new(max + 1) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn save(&self, ds: &Dataset) -> Result<String, StoreError> {
        ds.validate()?;
        let id = {
            let mut next = self.next.lock().expect("store counter poisoned");
            let id = format!("ds-{:06}", *next);
            *next += 1;
            id
        };
        write_container(&self.path_of(&id), &id, ds)?;
        Ok(id)
    }

    pub fn load(&self, id: &str) -> Result<Dataset, StoreError> {
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let dir = self.path_of(id);
        if !dir.join(MANIFEST).is_file() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        read_container(&dir).map(|(_, ds)| ds)
    }
}

pub fn encode_channel(ch: &Channel) -> Vec<u8> {
    let dtype = ch.data.dtype();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * ch.shape.len() + dtype.size() * ch.data.len());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(dtype.code());
    out.push(ch.shape.len() as u8);
    out.extend_from_slice(&[0u8; 9]);
    for &d in &ch.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &ch.data {
        ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode_channel(name: &str, bytes: &[u8], units: &str) -> Result<Channel, StoreError> {
    let corrupt = |reason: String| StoreError::CorruptChannel { channel: name.to_string(), reason };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported version {}", bytes[4])));
    }
    let dtype = Dtype::from_code(bytes[5]).ok_or_else(|| corrupt(format!("unknown dtype code {}", bytes[5])))?;
    let ndim = bytes[6] as usize;
    let dims_end = HEADER_LEN + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(corrupt("truncated dimensions".into()));
    }
    let shape: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("shape overflow".into()))?;
    let payload = &bytes[dims_end..];
    if payload.len() != count * dtype.size() {
        return Err(corrupt(format!("payload is {} bytes, expected {}", payload.len(), count * dtype.size())));
    }
    let data = match dtype {
        Dtype::F32 => ArrayData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        Dtype::F64 => ArrayData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
    };
    Ok(Channel { shape, units: units.to_string(), data })
}

pub fn write_container(dir: &Path, id: &str, ds: &Dataset) -> Result<DatasetManifest, StoreError> {
    fs::create_dir_all(dir)?;
    let mut channels = Vec::with_capacity(ds.channels.len());
    for (name, ch) in &ds.channels {
        let bytes = encode_channel(ch);
        let file = format!("{name}.bin");
        fs::write(dir.join(&file), &bytes)?;
        channels.push(ChannelDescriptor {
            name: name.clone(),
            file,
            dtype: ch.data.dtype(),
            shape: ch.shape.clone(),
            units: ch.units.clone(),
            crc32: format!("{:08x}", crc32fast::hash(&bytes)),
        });
    }
    let manifest = DatasetManifest {
        format: "aescope-dataset".into(),
        version: FORMAT_VERSION,
        id: id.to_string(),
        name: ds.name.clone(),
        channels,
        metadata: ds.metadata.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| StoreError::Manifest(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(manifest)
}

/// Reads and fully validates a container directory (CRC, header, shapes).
pub fn read_container(dir: &Path) -> Result<(DatasetManifest, Dataset), StoreError> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| StoreError::Manifest(e.to_string()))?;
    let mut ds = Dataset::new(manifest.name.clone(), manifest.metadata.clone());
    for desc in &manifest.channels {
        if desc.file.contains(['/', '\\']) || desc.file.starts_with('.') {
            return Err(StoreError::Manifest(format!("illegal channel file name {}", desc.file)));
        }
        let bytes = fs::read(dir.join(&desc.file)).map_err(|e| StoreError::CorruptChannel {
            channel: desc.name.clone(),
            reason: e.to_string(),
        })?;
        let crc = format!("{:08x}", crc32fast::hash(&bytes));
        if crc != desc.crc32 {
            return Err(StoreError::CorruptChannel {
                channel: desc.name.clone(),
                reason: format!("crc32 {crc} does not match manifest {}", desc.crc32),
            });
        }
        let ch = decode_channel(&desc.name, &bytes, &desc.units)?;
        if ch.shape != desc.shape || ch.data.dtype() != desc.dtype {
            return Err(StoreError::CorruptChannel {
                channel: desc.name.clone(),
                reason: "header disagrees with manifest".into(),
            });
        }
        ds.insert(&desc.name, ch);
    }
    ds.validate()?;
    Ok((manifest, ds))
}
