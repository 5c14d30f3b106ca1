//! Seeded simulation of a band-excitation PFM microscope.
//!
//! The sample is a square ferroelectric film on an `rows x cols` pixel grid
//! covering `[0, extent_um]^2`. Pixel `(r, c)` is centred at
//! `((c + 0.5) dx, (r + 0.5) dy)`. Every random draw comes from a ChaCha
//! stream keyed by the sample seed, so identical seeds, configurations and
//! operation sequences reproduce bit-identical outputs.

use crate::be::BeParams;
use crate::field::Grid;
use crate::scalar::wrap_phase;
use crate::sho::{frequency_axis, BeSpectrum, Polarization, ShoParams};
use crate::trajectory::Region;
use chrono::{DateTime, Duration, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

// Stream ids keep sample generation and per-measurement noise independent.
const STREAM_POLARIZATION: u64 = 1;
const STREAM_TOPOGRAPHY: u64 = 2;
const STREAM_RESONANCE: u64 = 3;
const STREAM_MEASUREMENT_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstrumentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("position ({x_um}, {y_um}) µm is outside the scan window [0, {extent_um}]")]
    OutOfWindow { x_um: f64, y_um: f64, extent_um: f64 },
    #[error("{v} V exceeds the output range of ±{range} V")]
    RangeExceeded { v: f64, range: f64 },
    #[error("bias waveform is empty")]
    EmptyBias,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainPattern {
    /// Sign of Gaussian-smoothed white noise (sigma = extent / 16).
    Random,
    /// Left half +1, right half -1.
    TwoDomain,
    /// +1 everywhere.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub rows: usize,
    pub cols: usize,
    pub extent_um: f64,
    pub pattern: DomainPattern,
    pub a0: f64,
    pub f0_hz: f64,
    /// Per-pixel resonance drawn uniformly within ±this fraction of `f0_hz`.
    pub f0_spread_rel: f64,
    pub q_factor: f64,
    pub phase_offset_rad: f64,
    pub coercive_v: f64,
    pub switch_radius0_um: f64,
    pub noise_rel: f64,
    pub bumps: usize,
    pub bump_height_um: f64,
    pub topography_noise_um: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            extent_um: 5.0,
            pattern: DomainPattern::Random,
            a0: 1.0,
            f0_hz: 350e3,
            f0_spread_rel: 0.02,
            q_factor: 120.0,
            phase_offset_rad: 0.0,
            coercive_v: 3.0,
            switch_radius0_um: 0.1,
            noise_rel: 0.02,
            bumps: 12,
            bump_height_um: 0.05,
            topography_noise_um: 0.002,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<(), InstrumentError> {
        let bad = |m: String| Err(InstrumentError::InvalidConfig(m));
        if self.rows < 16 || self.cols < 16 {
            return bad(format!("grid {}x{} is below the 16x16 minimum", self.rows, self.cols));
        }
        for (name, v) in [
            ("extent_um", self.extent_um),
            ("a0", self.a0),
            ("f0_hz", self.f0_hz),
            ("coercive_v", self.coercive_v),
            ("switch_radius0_um", self.switch_radius0_um),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.q_factor > 1.0) {
            return bad(format!("q_factor must exceed 1, got {}", self.q_factor));
        }
        if !(self.phase_offset_rad.abs() <= std::f64::consts::PI) {
            return bad(format!("phase_offset_rad must lie in [-pi, pi], got {}", self.phase_offset_rad));
        }
        for (name, v) in [
            ("noise_rel", self.noise_rel),
            ("f0_spread_rel", self.f0_spread_rel),
            ("bump_height_um", self.bump_height_um),
            ("topography_noise_um", self.topography_noise_um),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.f0_spread_rel >= 1.0 {
            return bad("f0_spread_rel must be below 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub sample_rate_hz: f64,
    pub output_range_v: f64,
    pub channels: Vec<String>,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 4e6,
            output_range_v: 10.0,
            channels: vec!["topography".into(), "amplitude".into(), "phase".into()],
        }
    }
}

impl IoConfig {
    pub fn validate(&self) -> Result<(), InstrumentError> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(InstrumentError::InvalidConfig(format!("sample_rate_hz must be positive, got {}", self.sample_rate_hz)));
        }
        if !(self.output_range_v.is_finite() && self.output_range_v > 0.0) {
            return Err(InstrumentError::InvalidConfig(format!("output_range_v must be positive, got {}", self.output_range_v)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.channels {
            if !seen.insert(c) {
                return Err(InstrumentError::InvalidConfig(format!("duplicate channel name {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleModel {
    pub rows: usize,
    pub cols: usize,
    pub extent_um: f64,
    pub polarization: Grid<Polarization>,
    pub topography_um: Grid<f64>,
    pub sho: Grid<ShoParams<f64>>,
    pub coercive_v: f64,
    pub switch_radius0_um: f64,
    pub noise_rel: f64,
    pub seed: u64,
}

impl SampleModel {
    pub fn generate(seed: u64, cfg: &SampleConfig) -> Result<Self, InstrumentError> {
        cfg.validate()?;
        let (rows, cols) = (cfg.rows, cfg.cols);
        let polarization = match cfg.pattern {
            DomainPattern::Uniform => Grid::filled(rows, cols, Polarization::Up),
            DomainPattern::TwoDomain => {
                Grid::from_fn(rows, cols, |_, c| if c < cols / 2 { Polarization::Up } else { Polarization::Down })
            }
            DomainPattern::Random => {
                let mut rng = stream(seed, STREAM_POLARIZATION);
                let noise = Grid::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
                // sigma = extent / 16 expressed in pixels along each axis
                let smooth = smooth_separable(&noise, cols as f64 / 16.0, rows as f64 / 16.0);
                smooth.map(|&v| Polarization::from_sign(v))
            }
        };

        let dx = cfg.extent_um / cols as f64;
        let dy = cfg.extent_um / rows as f64;
        let mut rng = stream(seed, STREAM_TOPOGRAPHY);
        let bumps: Vec<(f64, f64, f64, f64)> = (0..cfg.bumps)
            .map(|_| {
                let x = rng.gen::<f64>() * cfg.extent_um;
                let y = rng.gen::<f64>() * cfg.extent_um;
                let w = cfg.extent_um * (0.03 + 0.07 * rng.gen::<f64>());
                let h = cfg.bump_height_um * (0.5 + rng.gen::<f64>());
                (x, y, w, h)
            })
            .collect();
        let topography_um = Grid::from_fn(rows, cols, |r, c| {
            let (x, y) = ((c as f64 + 0.5) * dx, (r as f64 + 0.5) * dy);
            let base: f64 = bumps
                .iter()
                .map(|&(bx, by, w, h)| h * (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * w * w)).exp())
                .sum();
            base + cfg.topography_noise_um * rng.sample::<f64, _>(StandardNormal)
        });

        let mut rng = stream(seed, STREAM_RESONANCE);
        let sho = Grid::from_fn(rows, cols, |_, _| {
            let u: f64 = rng.gen_range(-1.0..=1.0);
            ShoParams {
                a0: cfg.a0,
                f0_hz: cfg.f0_hz * (1.0 + cfg.f0_spread_rel * u),
                q_factor: cfg.q_factor,
                phase_offset_rad: cfg.phase_offset_rad,
            }
        });

        Ok(Self {
            rows,
            cols,
            extent_um: cfg.extent_um,
            polarization,
            topography_um,
            sho,
            coercive_v: cfg.coercive_v,
            switch_radius0_um: cfg.switch_radius0_um,
            noise_rel: cfg.noise_rel,
            seed,
        })
    }

    pub fn dx(&self) -> f64 {
        self.extent_um / self.cols as f64
    }

    pub fn dy(&self) -> f64 {
        self.extent_um / self.rows as f64
    }

    pub fn window(&self) -> Region<f64> {
        Region::window(self.extent_um)
    }

    pub fn contains(&self, x_um: f64, y_um: f64) -> bool {
        x_um.is_finite() && y_um.is_finite() && self.window().contains(x_um, y_um)
    }

    /// Pixel `(row, col)` under a position inside the window.
    pub fn pixel_at(&self, x_um: f64, y_um: f64) -> (usize, usize) {
        let c = ((x_um / self.dx()).floor().max(0.0) as usize).min(self.cols - 1);
        let r = ((y_um / self.dy()).floor().max(0.0) as usize).min(self.rows - 1);
        (r, c)
    }

    pub fn pixel_center(&self, r: usize, c: usize) -> (f64, f64) {
        ((c as f64 + 0.5) * self.dx(), (r as f64 + 0.5) * self.dy())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian smoothing with periodic boundaries.
fn smooth_separable(g: &Grid<f64>, sigma_cols: f64, sigma_rows: f64) -> Grid<f64> {
    let kx = gaussian_kernel(sigma_cols);
    let ky = gaussian_kernel(sigma_rows);
    let (rx, ry) = ((kx.len() / 2) as isize, (ky.len() / 2) as isize);
    let (rows, cols) = (g.rows as isize, g.cols as isize);
    let h = Grid::from_fn(g.rows, g.cols, |r, c| {
        kx.iter()
            .enumerate()
            .map(|(i, w)| w * g.get(r, (c as isize + i as isize - rx).rem_euclid(cols) as usize))
            .sum()
    });
    Grid::from_fn(g.rows, g.cols, |r, c| {
        ky.iter()
            .enumerate()
            .map(|(i, w)| w * h.get((r as isize + i as isize - ry).rem_euclid(rows) as usize, c))
            .sum()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Idle,
    Busy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentState {
    pub tip_x_um: f64,
    pub tip_y_um: f64,
    pub tip_bias_v: f64,
    pub be: Option<BeParams>,
    pub io: IoConfig,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchReport {
    pub flipped: usize,
    pub radius_um: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BepsLoop {
    pub bias_v: Vec<f64>,
    pub states: Vec<Polarization>,
    pub spectra: Vec<BeSpectrum<f64>>,
}

/// Simulated wall clock advanced by modelled acquisition and motion times.
#[derive(Debug, Clone, PartialEq)]
pub struct SimClock {
    start: DateTime<Utc>,
    elapsed_us: i64,
}

impl SimClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self { start, elapsed_us: 0 }
    }

    pub fn advance_s(&mut self, seconds: f64) {
        if seconds.is_finite() && seconds > 0.0 {
            self.elapsed_us += (seconds * 1e6).round() as i64;
        }
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.start + Duration::microseconds(self.elapsed_us)
    }

    /// ISO-8601 UTC with millisecond precision.
    pub fn timestamp(&self) -> String {
        self.now().to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

pub fn default_epoch() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z").unwrap().with_timezone(&Utc)
}

#[derive(Debug, Clone)]
pub struct VirtualInstrument {
    sample: SampleModel,
    state: InstrumentState,
    measurements: u64,
    clock: SimClock,
}

impl VirtualInstrument {
    pub fn create(seed: u64, cfg: &SampleConfig) -> Result<Self, InstrumentError> {
        Self::with_io(seed, cfg, IoConfig::default(), default_epoch())
    }

    pub fn with_io(seed: u64, cfg: &SampleConfig, io: IoConfig, epoch: DateTime<Utc>) -> Result<Self, InstrumentError> {
        io.validate()?;
        let sample = SampleModel::generate(seed, cfg)?;
        Ok(Self {
            sample,
            state: InstrumentState { tip_x_um: 0.0, tip_y_um: 0.0, tip_bias_v: 0.0, be: None, io, status: Status::Idle },
            measurements: 0,
            clock: SimClock::new(epoch),
        })
    }

    pub fn sample(&self) -> &SampleModel {
        &self.sample
    }

    pub fn state(&self) -> &InstrumentState {
        &self.state
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn measurement_count(&self) -> u64 {
        self.measurements
    }

    pub(crate) fn clock_mut(&mut self) -> &mut SimClock {
        &mut self.clock
    }

    pub(crate) fn state_mut(&mut self) -> &mut InstrumentState {
        &mut self.state
    }

    pub fn check_position(&self, x_um: f64, y_um: f64) -> Result<(), InstrumentError> {
        if self.sample.contains(x_um, y_um) {
            Ok(())
        } else {
            Err(InstrumentError::OutOfWindow { x_um, y_um, extent_um: self.sample.extent_um })
        }
    }

    pub fn check_voltage(&self, v: f64) -> Result<(), InstrumentError> {
        let range = self.state.io.output_range_v;
        if !v.is_finite() || v.abs() > range {
            Err(InstrumentError::RangeExceeded { v, range })
        } else {
            Ok(())
        }
    }

    /// Off-field BE spectrum at a position, using the pixel's current state.
    pub fn measure_be_spectrum(&mut self, x_um: f64, y_um: f64, be: &BeParams) -> Result<BeSpectrum<f64>, InstrumentError> {
        self.check_position(x_um, y_um)?;
        be.validate().map_err(|e| InstrumentError::InvalidArgument(e.to_string()))?;
        let (r, c) = self.sample.pixel_at(x_um, y_um);
        Ok(self.measure_pixel(r, c, be))
    }

    pub(crate) fn measure_pixel(&mut self, r: usize, c: usize, be: &BeParams) -> BeSpectrum<f64> {
        self.state.status = Status::Busy;
        let sho = *self.sample.sho.get(r, c);
        let pol = *self.sample.polarization.get(r, c);
        let axis = frequency_axis(be.center_hz(), be.band_width_hz(), be.num_bins);
        let mut s = sho.spectrum(&axis, be.amplitude_v, pol);
        let noise = self.sample.noise_rel;
        if noise > 0.0 {
            let mut rng = stream(self.sample.seed, STREAM_MEASUREMENT_BASE + self.measurements);
            let peak = s.amplitude.iter().copied().fold(0.0f64, f64::max);
            let sd = noise * peak;
            for a in &mut s.amplitude {
                *a = (*a + sd * rng.sample::<f64, _>(StandardNormal)).max(0.0);
            }
            for p in &mut s.phase_rad {
                *p = wrap_phase(*p + noise * rng.sample::<f64, _>(StandardNormal));
            }
        }
        self.measurements += 1;
        self.clock.advance_s(be.acquisition_s());
        self.state.status = Status::Idle;
        s
    }

    pub fn topography_at(&self, x_um: f64, y_um: f64) -> f64 {
        let (r, c) = self.sample.pixel_at(x_um, y_um);
        *self.sample.topography_um.get(r, c)
    }

    /// Flip radius for a pulse of `v` volts; zero at or below the coercive voltage.
    pub fn switch_radius(&self, v: f64) -> f64 {
        let vc = self.sample.coercive_v;
        if v.abs() <= vc {
            0.0
        } else {
            self.sample.switch_radius0_um * (v.abs() / vc - 1.0).sqrt()
        }
    }

    pub fn apply_dc_pulse_at(&mut self, x_um: f64, y_um: f64, v: f64, duration_ms: f64) -> Result<SwitchReport, InstrumentError> {
        self.check_position(x_um, y_um)?;
        if !(duration_ms.is_finite() && duration_ms > 0.0) {
            return Err(InstrumentError::InvalidArgument(format!("duration_ms must be positive, got {duration_ms}")));
        }
        self.check_voltage(v)?;
        self.clock.advance_s(duration_ms * 1e-3);
        if v.abs() <= self.sample.coercive_v {
            return Ok(SwitchReport { flipped: 0, radius_um: 0.0 });
        }
        let radius = self.switch_radius(v);
        let target = Polarization::from_sign(v);
        let mut flipped = 0;
        for r in 0..self.sample.rows {
            for c in 0..self.sample.cols {
                let (px, py) = self.sample.pixel_center(r, c);
                if (px - x_um).hypot(py - y_um) <= radius && *self.sample.polarization.get(r, c) != target {
                    self.sample.polarization.set(r, c, target);
                    flipped += 1;
                }
            }
        }
        Ok(SwitchReport { flipped, radius_um: radius })
    }

    /// Checks a BEPS request without side effects.
    pub fn check_beps(&self, x_um: f64, y_um: f64, bias: &[f64]) -> Result<(), InstrumentError> {
        self.check_position(x_um, y_um)?;
        if bias.is_empty() {
            return Err(InstrumentError::EmptyBias);
        }
        bias.iter().try_for_each(|&v| self.check_voltage(v))
    }

    /// Single-hysteron BEPS loop: each bias step may switch the pixel, then an
    /// off-field spectrum is recorded.
    pub fn beps_at(&mut self, x_um: f64, y_um: f64, bias: &[f64], be: &BeParams) -> Result<BepsLoop, InstrumentError> {
        self.check_beps(x_um, y_um, bias)?;
        be.validate().map_err(|e| InstrumentError::InvalidArgument(e.to_string()))?;
        let (r, c) = self.sample.pixel_at(x_um, y_um);
        let vc = self.sample.coercive_v;
        let mut out = BepsLoop { bias_v: bias.to_vec(), states: Vec::with_capacity(bias.len()), spectra: Vec::with_capacity(bias.len()) };
        for &v in bias {
            let state = *self.sample.polarization.get(r, c);
            if v.abs() >= vc && Polarization::from_sign(v) != state {
                self.sample.polarization.set(r, c, state.flipped());
            }
            out.states.push(*self.sample.polarization.get(r, c));
            out.spectra.push(self.measure_pixel(r, c, be));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SampleConfig {
        SampleConfig { extent_um: 20.0, ..Default::default() }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = VirtualInstrument::create(7, &cfg()).unwrap();
        let b = VirtualInstrument::create(7, &cfg()).unwrap();
        let c = VirtualInstrument::create(8, &cfg()).unwrap();
        assert_eq!(a.sample(), b.sample());
        assert_ne!(a.sample().polarization, c.sample().polarization);
    }

    #[test]
    fn random_pattern_has_both_domains() {
        let a = VirtualInstrument::create(7, &cfg()).unwrap();
        let up = a.sample().polarization.data.iter().filter(|p| **p == Polarization::Up).count();
        assert!(up > 0 && up < 64 * 64);
    }

    #[test]
    fn small_grid_rejected() {
        let c = SampleConfig { rows: 8, cols: 8, ..cfg() };
        assert!(matches!(VirtualInstrument::create(1, &c), Err(InstrumentError::InvalidConfig(_))));
        let c = SampleConfig { extent_um: 0.0, ..cfg() };
        assert!(matches!(VirtualInstrument::create(1, &c), Err(InstrumentError::InvalidConfig(_))));
    }

    #[test]
    fn resonance_spread_within_two_percent() {
        let a = VirtualInstrument::create(3, &cfg()).unwrap();
        assert!(a.sample().sho.data.iter().all(|s| (s.f0_hz / 350e3 - 1.0).abs() <= 0.02 + 1e-15));
    }

    #[test]
    fn switch_radius_formula() {
        let a = VirtualInstrument::create(1, &cfg()).unwrap();
        assert!((a.switch_radius(6.0) - 0.1).abs() < 1e-15);
        assert_eq!(a.switch_radius(2.0), 0.0);
    }

    #[test]
    fn pulse_below_coercive_flips_nothing() {
        let mut a = VirtualInstrument::create(1, &cfg()).unwrap();
        assert_eq!(a.apply_dc_pulse_at(10.0, 10.0, 2.0, 1.0).unwrap().flipped, 0);
        assert!(matches!(a.apply_dc_pulse_at(10.0, 10.0, 20.0, 1.0), Err(InstrumentError::RangeExceeded { .. })));
        assert!(matches!(a.apply_dc_pulse_at(-1.0, 10.0, 6.0, 1.0), Err(InstrumentError::OutOfWindow { .. })));
    }

    #[test]
    fn beps_rejects_bad_input() {
        let mut a = VirtualInstrument::create(1, &cfg()).unwrap();
        let be = BeParams::default();
        assert_eq!(a.beps_at(1.0, 1.0, &[], &be).unwrap_err(), InstrumentError::EmptyBias);
        a.state_mut().io.output_range_v = 9.0;
        assert!(matches!(a.beps_at(1.0, 1.0, &[10.0], &be), Err(InstrumentError::RangeExceeded { .. })));
        assert_eq!(a.measurement_count(), 0);
    }

    #[test]
    fn clock_formats_millis() {
        let mut c = SimClock::new(default_epoch());
        c.advance_s(1.2345);
        assert_eq!(c.timestamp(), "2024-01-01T00:00:01.234Z");
    }
}
