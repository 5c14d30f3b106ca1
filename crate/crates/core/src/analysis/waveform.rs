//! Band-excitation drive waveform synthesis.

use crate::be::{BeParams, ExcitationWaveform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub t_s: Vec<f64>,
    pub volts: Vec<f64>,
}

/// Drive signal over `duration_ms` sampled at `sample_rate_hz`.
///
/// Sinc mode: `A sinc(pi bw (t - t0)) cos(2 pi fc (t - t0))` with `t0` at mid
/// duration, whose spectrum is flat over `[fc - bw/2, fc + bw/2]`.
/// Chirp mode: constant-amplitude linear sweep from the lower to the upper
/// band edge.
pub fn excitation_waveform(be: &BeParams, sample_rate_hz: f64) -> TimeSeries {
    let duration = be.duration_ms * 1e-3;
    let n = (duration * sample_rate_hz).round().max(1.0) as usize + 1;
    let t0 = duration / 2.0;
    let fc = be.center_hz();
    let bw = be.band_width_hz();
    let a = be.amplitude_v;
    let two_pi = 2.0 * std::f64::consts::PI;
    let t_s: Vec<f64> = (0..n).map(|i| i as f64 / sample_rate_hz).collect();
    let volts = t_s
        .iter()
        .map(|&t| match be.waveform {
            ExcitationWaveform::Sinc => {
                let tau = t - t0;
                let x = std::f64::consts::PI * bw * tau;
                let sinc = if x == 0.0 { 1.0 } else { x.sin() / x };
                a * sinc * (two_pi * fc * tau).cos()
            }
            ExcitationWaveform::Chirp => {
                let f_start = fc - bw / 2.0;
                let rate = bw / duration;
                a * (two_pi * (f_start * t + 0.5 * rate * t * t)).sin()
            }
        })
        .collect();
    TimeSeries { t_s, volts }
}
