//! Damped simple-harmonic-oscillator response of the cantilever under band
//! excitation.
//!
//! The amplitude is evaluated in the normalized form
//! `a0 / sqrt((1 - u^2)^2 + (u / Q)^2)` with `u = f / f0`, which is
//! algebraically identical to `a0 f0^2 / sqrt((f0^2 - f^2)^2 + (f0 f / Q)^2)`
//! but keeps `f32` evaluation well conditioned at MHz-scale frequencies.

use crate::scalar::{linspace, wrap_phase, Scalar};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShoError {
    #[error("a0 must be positive, got {0}")]
    Amplitude(f64),
    #[error("f0_hz must be positive, got {0}")]
    Frequency(f64),
    #[error("q_factor must exceed 1, got {0}")]
    Quality(f64),
    #[error("phase_offset_rad must lie in [-pi, pi], got {0}")]
    Phase(f64),
}

/// Ferroelectric polarization of one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    Up,
    Down,
}

impl Polarization {
    pub fn from_sign<T: Scalar>(v: T) -> Self {
        if v < T::zero() {
            Polarization::Down
        } else {
            Polarization::Up
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarization::Up => 1,
            Polarization::Down => -1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarization::Up => Polarization::Down,
            Polarization::Down => Polarization::Up,
        }
    }

    /// Phase offset contributed by the domain orientation: 0 or pi.
    pub fn phase_offset<T: Scalar>(self) -> T {
        match self {
            Polarization::Up => T::zero(),
            Polarization::Down => T::PI(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShoParams<T> {
    pub a0: T,
    pub f0_hz: T,
    pub q_factor: T,
    pub phase_offset_rad: T,
}

impl<T: Scalar> ShoParams<T> {
    pub fn new(a0: T, f0_hz: T, q_factor: T, phase_offset_rad: T) -> Result<Self, ShoError> {
        let p = Self { a0, f0_hz, q_factor, phase_offset_rad };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ShoError> {
        if !(self.a0 > T::zero()) {
            return Err(ShoError::Amplitude(self.a0.to_f64_lossy()));
        }
        if !(self.f0_hz > T::zero()) {
            return Err(ShoError::Frequency(self.f0_hz.to_f64_lossy()));
        }
        if !(self.q_factor > T::one()) {
            return Err(ShoError::Quality(self.q_factor.to_f64_lossy()));
        }
        if !(self.phase_offset_rad.abs() <= T::PI()) {
            return Err(ShoError::Phase(self.phase_offset_rad.to_f64_lossy()));
        }
        Ok(())
    }

    /// Response amplitude at drive frequency `f_hz` for unit drive.
    pub fn amplitude_at(&self, f_hz: T) -> T {
        let u = f_hz / self.f0_hz;
        let re = T::one() - u * u;
        let im = u / self.q_factor;
        self.a0 / (re * re + im * im).sqrt()
    }

    /// Response phase (wrapped) for a pixel of the given polarization.
    pub fn phase_at(&self, f_hz: T, pol: Polarization) -> T {
        let u = f_hz / self.f0_hz;
        let lag = (u / self.q_factor).atan2(T::one() - u * u);
        wrap_phase(pol.phase_offset::<T>() - lag + self.phase_offset_rad)
    }

    /// Noiseless spectrum over `axis`, amplitude scaled by `drive`.
    pub fn spectrum(&self, axis: &[T], drive: T, pol: Polarization) -> BeSpectrum<T> {
        BeSpectrum {
            frequency_hz: axis.to_vec(),
            amplitude: axis.iter().map(|&f| drive * self.amplitude_at(f)).collect(),
            phase_rad: axis.iter().map(|&f| self.phase_at(f, pol)).collect(),
        }
    }
}

/// One band-excitation response spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeSpectrum<T> {
    pub frequency_hz: Vec<T>,
    pub amplitude: Vec<T>,
    pub phase_rad: Vec<T>,
}

impl<T: Scalar> BeSpectrum<T> {
    pub fn len(&self) -> usize {
        self.frequency_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequency_hz.is_empty()
    }

    /// Checks equal lengths and a strictly increasing frequency axis.
    pub fn is_consistent(&self) -> bool {
        self.amplitude.len() == self.frequency_hz.len()
            && self.phase_rad.len() == self.frequency_hz.len()
            && self.frequency_hz.windows(2).all(|w| w[1] > w[0])
    }
}

/// Frequency axis spanning `[center - bw/2, center + bw/2]` in `bins` samples.
pub fn frequency_axis<T: Scalar>(center_hz: T, band_width_hz: T, bins: usize) -> Vec<T> {
    let half = band_width_hz / T::of(2.0);
    linspace(center_hz - half, center_hz + half, bins)
}
