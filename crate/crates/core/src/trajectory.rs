//! Tip path synthesis: raster, spiral and flower (circle with oscillating
//! radius) X/Y waveforms, plus window and slew-rate validation.

use crate::scalar::{linspace, Scalar};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("radius becomes non-positive: amplitude {amp} >= base radius {r0}")]
    RadiusNonpositive { r0: f64, amp: f64 },
    #[error("{0} samples requested, at least 16 required")]
    TooFewSamples(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("region {0:?} is empty or exceeds the scan window")]
    InvalidRegion([f64; 4]),
}

/// Axis-aligned rectangle `(x0, y0)`-`(x1, y1)` in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region<T> {
    pub x0: T,
    pub y0: T,
    pub x1: T,
    pub y1: T,
}

impl<T: Scalar> Region<T> {
    pub fn new(x0: T, y0: T, x1: T, y1: T) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Square scan window `[0, extent]^2`.
    pub fn window(extent: T) -> Self {
        Self::new(T::zero(), T::zero(), extent, extent)
    }

    pub fn contains(&self, x: T, y: T) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn contains_region(&self, other: &Region<T>) -> bool {
        other.x1 > other.x0
            && other.y1 > other.y0
            && self.contains(other.x0, other.y0)
            && self.contains(other.x1, other.y1)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1].map(|v| v.to_f64_lossy())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTrajectory<T> {
    pub samples: Vec<[T; 2]>,
    pub sample_rate_hz: T,
    pub closed: bool,
}

impl<T: Scalar> ScanTrajectory<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Writes `x_um,y_um` rows with nine significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x_um,y_um")?;
        for [x, y] in &self.samples {
            writeln!(out, "{},{}", sig9(x.to_f64_lossy()), sig9(y.to_f64_lossy()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpiralMode {
    ConstantAngularVelocity,
    ConstantLinearVelocity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowerParams<T> {
    pub center: [T; 2],
    pub r0_um: T,
    pub amp_um: T,
    pub petals: usize,
    pub n_samples: usize,
    pub sample_rate_hz: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralParams<T> {
    pub center: [T; 2],
    pub r_max_um: T,
    pub pitch_um: T,
    pub mode: SpiralMode,
    pub sample_rate_hz: T,
    /// Samples per revolution (angular mode) or per first-turn arc length
    /// (linear mode).
    pub points_per_turn: usize,
}

/// `r(theta) = r0 + amp sin(petals theta)` sampled endpoint-inclusive over one
/// revolution.
pub fn flower_waveform<T: Scalar>(p: &FlowerParams<T>) -> Result<ScanTrajectory<T>, TrajectoryError> {
    if p.n_samples < 16 {
        return Err(TrajectoryError::TooFewSamples(p.n_samples));
    }
    if !(p.amp_um >= T::zero()) || !(p.r0_um > T::zero()) || !(p.sample_rate_hz > T::zero()) {
        return Err(TrajectoryError::InvalidParams(format!(
            "r0_um={}, amp_um={}, sample_rate_hz={}",
            p.r0_um, p.amp_um, p.sample_rate_hz
        )));
    }
    if p.amp_um >= p.r0_um {
        return Err(TrajectoryError::RadiusNonpositive { r0: p.r0_um.to_f64_lossy(), amp: p.amp_um.to_f64_lossy() });
    }
    let two_pi = T::PI() + T::PI();
    let last = T::of_usize(p.n_samples - 1);
    let k = T::of_usize(p.petals);
    let samples = (0..p.n_samples)
        .map(|i| {
            let theta = two_pi * T::of_usize(i) / last;
            let r = p.r0_um + p.amp_um * (k * theta).sin();
            [p.center[0] + r * theta.cos(), p.center[1] + r * theta.sin()]
        })
        .collect();
    Ok(ScanTrajectory { samples, sample_rate_hz: p.sample_rate_hz, closed: true })
}

/// Archimedean spiral `r = pitch theta / 2 pi` out to `r_max`.
pub fn spiral_waveform<T: Scalar>(p: &SpiralParams<T>) -> Result<ScanTrajectory<T>, TrajectoryError> {
    let bad = !(p.r_max_um > T::zero())
        || !(p.pitch_um > T::zero())
        || !(p.sample_rate_hz > T::zero())
        || p.r_max_um < p.pitch_um
        || p.points_per_turn < 4;
    if bad {
        return Err(TrajectoryError::InvalidParams(format!(
            "r_max_um={}, pitch_um={}, sample_rate_hz={}, points_per_turn={}",
            p.r_max_um, p.pitch_um, p.sample_rate_hz, p.points_per_turn
        )));
    }
    let two_pi = T::PI() + T::PI();
    let theta_max = two_pi * p.r_max_um / p.pitch_um;
    let c = p.pitch_um / two_pi;
    let point = |theta: T| {
        let r = c * theta;
        [p.center[0] + r * theta.cos(), p.center[1] + r * theta.sin()]
    };
    let mut samples = Vec::new();
    match p.mode {
        SpiralMode::ConstantAngularVelocity => {
            let step = two_pi / T::of_usize(p.points_per_turn);
            let mut i = 0usize;
            loop {
                let theta = step * T::of_usize(i);
                if theta > theta_max {
                    break;
                }
                samples.push(point(theta));
                i += 1;
            }
        }
        SpiralMode::ConstantLinearVelocity => {
            // Arc element ds = sqrt(r^2 + c^2) dtheta.
            let ds = p.pitch_um * two_pi / T::of_usize(p.points_per_turn);
            let mut theta = T::zero();
            while theta <= theta_max {
                samples.push(point(theta));
                let r = c * theta;
                let d1 = ds / (r * r + c * c).sqrt();
                let mid = c * (theta + d1 / T::of(2.0));
                theta = theta + ds / (mid * mid + c * c).sqrt();
            }
        }
    }
    if samples.len() < 2 {
        return Err(TrajectoryError::InvalidParams("spiral produced fewer than 2 samples".into()));
    }
    Ok(ScanTrajectory { samples, sample_rate_hz: p.sample_rate_hz, closed: false })
}

/// Serpentine raster: `lines` rows from `y0` to `y1`, each with
/// `pts_per_line` points from `x0` to `x1`, odd rows reversed.
pub fn raster_waveform<T: Scalar>(
    region: Region<T>,
    lines: usize,
    pts_per_line: usize,
    sample_rate_hz: T,
    window: Region<T>,
) -> Result<ScanTrajectory<T>, TrajectoryError> {
    if lines < 1 || pts_per_line < 2 || !(sample_rate_hz > T::zero()) {
        return Err(TrajectoryError::InvalidParams(format!(
            "lines={lines}, pts_per_line={pts_per_line}, sample_rate_hz={sample_rate_hz}"
        )));
    }
    if !window.contains_region(&region) {
        return Err(TrajectoryError::InvalidRegion(region.as_array()));
    }
    let xs = linspace(region.x0, region.x1, pts_per_line);
    let ys = linspace(region.y0, region.y1, lines);
    let mut samples = Vec::with_capacity(lines * pts_per_line);
    for (li, &y) in ys.iter().enumerate() {
        if li % 2 == 0 {
            samples.extend(xs.iter().map(|&x| [x, y]));
        } else {
            samples.extend(xs.iter().rev().map(|&x| [x, y]));
        }
    }
    Ok(ScanTrajectory { samples, sample_rate_hz, closed: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    OutOfWindow { index: usize, x_um: f64, y_um: f64 },
    /// Speed between samples `index - 1` and `index`.
    Speed { index: usize, speed_um_s: f64 },
}

/// Lists every out-of-window sample and every over-speed segment. Empty means ok.
pub fn validate_trajectory<T: Scalar>(t: &ScanTrajectory<T>, window: &Region<T>, max_speed_um_s: T) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, &[x, y]) in t.samples.iter().enumerate() {
        if !window.contains(x, y) {
            out.push(Violation::OutOfWindow { index: i, x_um: x.to_f64_lossy(), y_um: y.to_f64_lossy() });
        }
    }
    for (i, w) in t.samples.windows(2).enumerate() {
        let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
        let speed = d * t.sample_rate_hz;
        if !speed.is_finite() || speed > max_speed_um_s {
            out.push(Violation::Speed { index: i + 1, speed_um_s: speed.to_f64_lossy() });
        }
    }
    if !(t.sample_rate_hz > T::zero()) {
        out.push(Violation::Speed { index: 0, speed_um_s: f64::INFINITY });
    }
    out
}

/// Formats with nine significant digits, `%.9g` style.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.8e}", v);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, v);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{}e{}{:02}", m, if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flower(r0: f64, amp: f64, petals: usize) -> FlowerParams<f64> {
        FlowerParams { center: [10.0, 10.0], r0_um: r0, amp_um: amp, petals, n_samples: 1001, sample_rate_hz: 1e3 }
    }

    fn radii(t: &ScanTrajectory<f64>, c: [f64; 2]) -> Vec<f64> {
        t.samples.iter().map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()).collect()
    }

    #[test]
    fn degenerate_flower_is_circle() {
        let t = flower_waveform(&flower(5.0, 0.0, 6)).unwrap();
        assert!(radii(&t, [10.0, 10.0]).iter().all(|r| (r - 5.0).abs() < 1e-9));
        assert!(t.closed);
    }

    #[test]
    fn flower_extrema() {
        let t = flower_waveform(&flower(4.0, 1.0, 6)).unwrap();
        let r = radii(&t, [10.0, 10.0]);
        let max = r.iter().cloned().fold(f64::MIN, f64::max);
        let min = r.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 5.0).abs() < 1e-9, "{max}");
        assert!((min - 3.0).abs() < 1e-9, "{min}");
    }

    #[test]
    fn flower_errors() {
        assert!(matches!(flower_waveform(&flower(1.0, 1.0, 3)), Err(TrajectoryError::RadiusNonpositive { .. })));
        let mut p = flower(4.0, 1.0, 3);
        p.n_samples = 8;
        assert_eq!(flower_waveform(&p), Err(TrajectoryError::TooFewSamples(8)));
    }

    #[test]
    fn raster_serpentine() {
        let w = Region::window(1.0);
        let t = raster_waveform(Region::new(0.0, 0.0, 1.0, 1.0), 2, 3, 1e3, w).unwrap();
        assert_eq!(t.samples, vec![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.0, 1.0], [0.5, 1.0], [0.0, 1.0]]);
        assert_eq!(raster_waveform(Region::new(0.0, 0.0, 1.0, 1.0), 64, 64, 1e3, w).unwrap().len(), 4096);
        assert!(matches!(
            raster_waveform(Region::new(0.0, 0.0, 2.0, 1.0), 2, 3, 1e3, w),
            Err(TrajectoryError::InvalidRegion(_))
        ));
    }

    #[test]
    fn spiral_terminates_inside_rmax() {
        for mode in [SpiralMode::ConstantAngularVelocity, SpiralMode::ConstantLinearVelocity] {
            let p = SpiralParams {
                center: [0.0, 0.0],
                r_max_um: 5.0,
                pitch_um: 1.0,
                mode,
                sample_rate_hz: 1e3,
                points_per_turn: 64,
            };
            let t = spiral_waveform(&p).unwrap();
            let r = radii(&t, [0.0, 0.0]);
            assert!(*r.last().unwrap() <= 5.0);
            assert!(r.iter().all(|&x| x <= 5.0 + 1e-12));
        }
    }

    #[test]
    fn spiral_rejects_pitch_above_rmax() {
        let p = SpiralParams {
            center: [0.0, 0.0],
            r_max_um: 0.5,
            pitch_um: 1.0,
            mode: SpiralMode::ConstantAngularVelocity,
            sample_rate_hz: 1e3,
            points_per_turn: 64,
        };
        assert!(matches!(spiral_waveform(&p), Err(TrajectoryError::InvalidParams(_))));
    }

    #[test]
    fn validation_reports_window_and_speed() {
        let w = Region::window(20.0);
        let ok = ScanTrajectory { samples: vec![[1.0, 1.0], [1.01, 1.0]], sample_rate_hz: 1e3, closed: false };
        assert!(validate_trajectory(&ok, &w, 100.0).is_empty());
        let out = ScanTrajectory { samples: vec![[1.0, 1.0], [-1.0, 1.0]], sample_rate_hz: 1.0, closed: false };
        assert_eq!(
            validate_trajectory(&out, &w, 100.0),
            vec![Violation::OutOfWindow { index: 1, x_um: -1.0, y_um: 1.0 }]
        );
        let fast = ScanTrajectory { samples: vec![[0.0, 0.0], [10.0, 0.0]], sample_rate_hz: 1e3, closed: false };
        assert_eq!(validate_trajectory(&fast, &w, 100.0), vec![Violation::Speed { index: 1, speed_um_s: 10_000.0 }]);
    }

    #[test]
    fn sig9_formats() {
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(1.0), "1");
        assert_eq!(sig9(2.5), "2.5");
        assert_eq!(sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(sig9(123456789.4), "123456789");
        assert_eq!(sig9(1234567890.0), "1.23456789e+09");
        assert_eq!(sig9(-0.000012345), "-1.2345e-05");
        assert_eq!(sig9(0.0001), "0.0001");
    }

    #[test]
    fn csv_export() {
        let t = ScanTrajectory { samples: vec![[0.0, 1.5], [2.0, 1.0 / 3.0]], sample_rate_hz: 1.0, closed: false };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x_um,y_um\n0,1.5\n2,0.333333333\n");
    }
}
