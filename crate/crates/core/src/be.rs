//! Band-excitation drive parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExcitationWaveform {
    Sinc,
    Chirp,
}

impl ExcitationWaveform {
    pub fn as_str(self) -> &'static str {
        match self {
            ExcitationWaveform::Sinc => "sinc",
            ExcitationWaveform::Chirp => "chirp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid BE parameter {field}: {reason}")]
pub struct BeParamsError {
    pub field: &'static str,
    pub reason: String,
}

/// The seven band-excitation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeParams {
    pub center_frequency_khz: f64,
    pub band_width_khz: f64,
    pub amplitude_v: f64,
    pub num_bins: usize,
    pub repeats: usize,
    pub duration_ms: f64,
    pub waveform: ExcitationWaveform,
}

impl Default for BeParams {
    fn default() -> Self {
        Self {
            center_frequency_khz: 350.0,
            band_width_khz: 60.0,
            amplitude_v: 1.0,
            num_bins: 256,
            repeats: 4,
            duration_ms: 4.0,
            waveform: ExcitationWaveform::Sinc,
        }
    }
}

impl BeParams {
    pub fn validate(&self) -> Result<(), BeParamsError> {
        let positive = [
            ("center_frequency_khz", self.center_frequency_khz),
            ("band_width_khz", self.band_width_khz),
            ("amplitude_v", self.amplitude_v),
            ("duration_ms", self.duration_ms),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(BeParamsError { field, reason: format!("must be positive and finite, got {v}") });
            }
        }
        if self.num_bins < 8 {
            return Err(BeParamsError { field: "num_bins", reason: format!("must be at least 8, got {}", self.num_bins) });
        }
        if self.repeats == 0 {
            return Err(BeParamsError { field: "repeats", reason: "must be positive".into() });
        }
        let low = self.center_frequency_khz - self.band_width_khz / 2.0;
        if low <= 0.0 {
            return Err(BeParamsError {
                field: "band_width_khz",
                reason: format!("band crosses zero: lower edge {low} kHz"),
            });
        }
        Ok(())
    }

    pub fn center_hz(&self) -> f64 {
        self.center_frequency_khz * 1e3
    }

    pub fn band_width_hz(&self) -> f64 {
        self.band_width_khz * 1e3
    }

    /// Acquisition time of one spectrum (all repeats).
    pub fn acquisition_s(&self) -> f64 {
        self.duration_ms * 1e-3 * self.repeats as f64
    }
}

/// Any subset of [`BeParams`]; missing fields take defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialBeParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_frequency_khz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_width_khz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waveform: Option<ExcitationWaveform>,
}

impl PartialBeParams {
    pub fn resolve(&self) -> BeParams {
        let d = BeParams::default();
        BeParams {
            center_frequency_khz: self.center_frequency_khz.unwrap_or(d.center_frequency_khz),
            band_width_khz: self.band_width_khz.unwrap_or(d.band_width_khz),
            amplitude_v: self.amplitude_v.unwrap_or(d.amplitude_v),
            num_bins: self.num_bins.unwrap_or(d.num_bins),
            repeats: self.repeats.unwrap_or(d.repeats),
            duration_ms: self.duration_ms.unwrap_or(d.duration_ms),
            waveform: self.waveform.unwrap_or(d.waveform),
        }
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}
