//! Hierarchical channel container produced by acquisitions.

mod store;

pub use store::{
    decode_channel, encode_channel, read_container, write_container, ChannelDescriptor, DatasetManifest, DatasetStore, StoreError,
    FORMAT_VERSION, MAGIC,
};

use crate::be::BeParams;
use crate::field::Grid;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const TOPOGRAPHY: &str = "channel1_topography";
pub const AMPLITUDE: &str = "amplitude";
pub const PHASE: &str = "phase";
pub const RAW_SPECTRA: &str = "raw_spectra";
pub const RAW_PHASE: &str = "raw_phase";
pub const FREQUENCY: &str = "frequency_hz";
pub const POSITIONS: &str = "positions_um";
pub const RESONANCE: &str = "resonance_hz";
pub const QUALITY: &str = "q_factor";
pub const BIAS: &str = "bias_v";
pub const LOOP_AMPLITUDE: &str = "loop_amplitude";
pub const LOOP_PHASE: &str = "loop_phase";
pub const LOOP_POLARIZATION: &str = "loop_polarization";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("channel {0} not found")]
    MissingChannel(String),
    #[error("channel {name}: shape {shape:?} implies {expected} values, found {found}")]
    ShapeMismatch { name: String, shape: Vec<usize>, expected: usize, found: usize },
    #[error("{count} values cannot be reshaped to {shape:?}")]
    CountMismatch { count: usize, shape: Vec<usize> },
    #[error("raw_spectra present without frequency_hz")]
    MissingFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
        }
    }

    /// Values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            ArrayData::F64(v) => Some(v),
            ArrayData::F32(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub shape: Vec<usize>,
    pub units: String,
    pub data: ArrayData,
}

impl Channel {
    pub fn f64(shape: Vec<usize>, units: &str, data: Vec<f64>) -> Self {
        Self { shape, units: units.to_string(), data: ArrayData::F64(data) }
    }

    pub fn expected_len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub producing_op: String,
    pub be: Option<BeParams>,
    /// `[x0, y0, x1, y1]` in µm when the acquisition covers a region.
    pub region: Option<[f64; 4]>,
    pub seed: u64,
    pub started: String,
    pub finished: String,
    pub tip_bias_v: f64,
    #[serde(default)]
    pub aborted: bool,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub channels: BTreeMap<String, Channel>,
    pub metadata: DatasetMetadata,
}

impl Dataset {
    pub fn new(name: impl Into<String>, metadata: DatasetMetadata) -> Self {
        Self { name: name.into(), channels: BTreeMap::new(), metadata }
    }

    pub fn insert(&mut self, name: &str, channel: Channel) {
        self.channels.insert(name.to_string(), channel);
    }

    pub fn channel(&self, name: &str) -> Result<&Channel, DatasetError> {
        self.channels.get(name).ok_or_else(|| DatasetError::MissingChannel(name.to_string()))
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, ch) in &self.channels {
            if ch.expected_len() != ch.data.len() {
                return Err(DatasetError::ShapeMismatch {
                    name: name.clone(),
                    shape: ch.shape.clone(),
                    expected: ch.expected_len(),
                    found: ch.data.len(),
                });
            }
        }
        if self.channels.contains_key(RAW_SPECTRA) && !self.channels.contains_key(FREQUENCY) {
            return Err(DatasetError::MissingFrequency);
        }
        Ok(())
    }

    /// Row-major reshape of a channel into an image; values unchanged.
    pub fn channel_image(&self, name: &str, rows: usize, cols: usize) -> Result<Grid<f64>, DatasetError> {
        let ch = self.channel(name)?;
        Grid::from_vec(rows, cols, ch.data.to_f64())
            .ok_or(DatasetError::CountMismatch { count: ch.data.len(), shape: vec![rows, cols] })
    }
}
