//! Canny edge detection for domain-wall finding in phase images.

use crate::field::Grid;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CannyError {
    #[error("image is {rows}x{cols}, at least 8x8 required")]
    TooSmall { rows: usize, cols: usize },
    #[error("image contains a non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("invalid Canny parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub gaussian_sigma_px: f64,
    pub low_ratio: f64,
    pub high_ratio: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { gaussian_sigma_px: 1.0, low_ratio: 0.1, high_ratio: 0.3 }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<(), CannyError> {
        if !(self.gaussian_sigma_px > 0.0 && self.gaussian_sigma_px.is_finite()) {
            return Err(CannyError::Params(format!("sigma must be positive, got {}", self.gaussian_sigma_px)));
        }
        if !(self.low_ratio > 0.0 && self.low_ratio < self.high_ratio && self.high_ratio <= 1.0) {
            return Err(CannyError::Params(format!(
                "need 0 < low_ratio < high_ratio <= 1, got low={} high={}",
                self.low_ratio, self.high_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallDetection {
    pub mask: Grid<bool>,
    /// `(row, col)` of every set mask cell, row-major order.
    pub coordinates: Vec<(usize, usize)>,
    pub params: CannyParams,
}

/// Sobel gradients of an image.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub gx: Grid<T>,
    pub gy: Grid<T>,
    pub magnitude: Grid<T>,
}

pub fn gaussian_blur<T: Scalar>(img: &Grid<T>, sigma: f64) -> Grid<T> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<T> = (-radius..=radius)
        .map(|k| T::of((-(k * k) as f64 / (2.0 * sigma * sigma)).exp()))
        .collect();
    let norm: T = kernel.iter().copied().sum();
    kernel.iter_mut().for_each(|k| *k = *k / norm);

    let (rows, cols) = (img.rows as isize, img.cols as isize);
    let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let horizontal = Grid::from_fn(img.rows, img.cols, |r, c| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, &w)| w * *img.get(r, clamp(c as isize + i as isize - radius, cols)))
            .sum()
    });
    Grid::from_fn(img.rows, img.cols, |r, c| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, &w)| w * *horizontal.get(clamp(r as isize + i as isize - radius, rows), c))
            .sum()
    })
}

pub fn sobel<T: Scalar>(img: &Grid<T>) -> Gradients<T> {
    let (rows, cols) = (img.rows, img.cols);
    let at = |r: isize, c: isize| *img.get(r.clamp(0, rows as isize - 1) as usize, c.clamp(0, cols as isize - 1) as usize);
    let two = T::of(2.0);
    let gx = Grid::from_fn(rows, cols, |r, c| {
        let (r, c) = (r as isize, c as isize);
        (at(r - 1, c + 1) + two * at(r, c + 1) + at(r + 1, c + 1)) - (at(r - 1, c - 1) + two * at(r, c - 1) + at(r + 1, c - 1))
    });
    let gy = Grid::from_fn(rows, cols, |r, c| {
        let (r, c) = (r as isize, c as isize);
        (at(r + 1, c - 1) + two * at(r + 1, c) + at(r + 1, c + 1)) - (at(r - 1, c - 1) + two * at(r - 1, c) + at(r - 1, c + 1))
    });
    let magnitude = Grid::from_fn(rows, cols, |r, c| gx.get(r, c).hypot(*gy.get(r, c)));
    Gradients { gx, gy, magnitude }
}

/// Row/column step along the gradient direction quantized to 0, 45, 90 or
/// 135 degrees.
pub fn quantized_direction<T: Scalar>(gx: T, gy: T) -> (isize, isize) {
    let mut angle = gy.to_f64_lossy().atan2(gx.to_f64_lossy()).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (0, 1)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (1, 0)
    } else {
        (1, -1)
    }
}

/// Keeps interior pixels whose magnitude is a local maximum along the
/// quantized gradient direction. On an exact tie between two neighbours the
/// one at the lower offset survives, so a symmetric ridge stays one pixel wide.
pub fn non_maximum_suppression<T: Scalar>(g: &Gradients<T>) -> Grid<T> {
    let (rows, cols) = (g.magnitude.rows, g.magnitude.cols);
    Grid::from_fn(rows, cols, |r, c| {
        if r == 0 || c == 0 || r + 1 == rows || c + 1 == cols {
            return T::zero();
        }
        let m = *g.magnitude.get(r, c);
        if m == T::zero() {
            return T::zero();
        }
        let (dr, dc) = quantized_direction(*g.gx.get(r, c), *g.gy.get(r, c));
        let fwd = *g.magnitude.get((r as isize + dr) as usize, (c as isize + dc) as usize);
        let back = *g.magnitude.get((r as isize - dr) as usize, (c as isize - dc) as usize);
        if m >= fwd && m > back {
            m
        } else {
            T::zero()
        }
    })
}

pub fn detect_domain_walls<T: Scalar>(image: &Grid<T>, p: &CannyParams) -> Result<WallDetection, CannyError> {
    p.validate()?;
    if image.rows < 8 || image.cols < 8 {
        return Err(CannyError::TooSmall { rows: image.rows, cols: image.cols });
    }
    if let Some(i) = image.data.iter().position(|v| !v.is_finite()) {
        return Err(CannyError::NonFinite { row: i / image.cols, col: i % image.cols });
    }
    let blurred = gaussian_blur(image, p.gaussian_sigma_px);
    let grads = sobel(&blurred);
    let thin = non_maximum_suppression(&grads);
    let max = grads.magnitude.data.iter().copied().fold(T::zero(), T::max);

    let mut mask = Grid::filled(image.rows, image.cols, false);
    if max > T::zero() {
        let high = max * T::of(p.high_ratio);
        let low = max * T::of(p.low_ratio);
        let mut queue = VecDeque::new();
        for (i, &m) in thin.data.iter().enumerate() {
            if m > T::zero() && m >= high {
                mask.data[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / image.cols) as isize, (i % image.cols) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= image.rows as isize || nc >= image.cols as isize {
                        continue;
                    }
                    let j = nr as usize * image.cols + nc as usize;
                    if !mask.data[j] && thin.data[j] > T::zero() && thin.data[j] >= low {
                        mask.data[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    let coordinates = mask
        .data
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (i / image.cols, i % image.cols))
        .collect();
    Ok(WallDetection { mask, coordinates, params: *p })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(rows: usize, cols: usize) -> Grid<f64> {
        Grid::from_fn(rows, cols, |_, c| if c < cols / 2 { 0.0 } else { std::f64::consts::PI })
    }

    #[test]
    fn vertical_step_detected_at_boundary() {
        let d = detect_domain_walls(&step(64, 64), &CannyParams::default()).unwrap();
        assert!(!d.coordinates.is_empty());
        assert!(d.coordinates.iter().all(|&(_, c)| c == 31 || c == 32));
        // Every interior row carries the wall.
        for r in 1..63 {
            assert!(d.coordinates.iter().any(|&(rr, _)| rr == r), "row {r} missing");
        }
    }

    #[test]
    fn constant_image_is_empty() {
        let d = detect_domain_walls(&Grid::filled(16, 16, 1.5), &CannyParams::default()).unwrap();
        assert!(d.coordinates.is_empty());
    }

    #[test]
    fn parameter_and_input_errors() {
        let bad = CannyParams { low_ratio: 0.3, high_ratio: 0.3, ..Default::default() };
        assert!(matches!(detect_domain_walls(&step(16, 16), &bad), Err(CannyError::Params(_))));
        assert!(matches!(
            detect_domain_walls(&step(4, 16), &CannyParams::default()),
            Err(CannyError::TooSmall { .. })
        ));
        let mut img = step(16, 16);
        img.set(3, 4, f64::NAN);
        assert_eq!(
            detect_domain_walls(&img, &CannyParams::default()),
            Err(CannyError::NonFinite { row: 3, col: 4 })
        );
    }

    #[test]
    fn coordinates_match_mask() {
        let d = detect_domain_walls(&step(32, 32), &CannyParams::default()).unwrap();
        let n = d.mask.data.iter().filter(|&&m| m).count();
        assert_eq!(n, d.coordinates.len());
        assert!(d.coordinates.iter().all(|&(r, c)| *d.mask.get(r, c)));
    }

    #[test]
    fn direction_bins() {
        assert_eq!(quantized_direction(1.0, 0.0), (0, 1));
        assert_eq!(quantized_direction(0.0, 1.0), (1, 0));
        assert_eq!(quantized_direction(1.0, 1.0), (1, 1));
        assert_eq!(quantized_direction(-1.0, 1.0), (1, -1));
        assert_eq!(quantized_direction(-1.0, 0.0), (0, 1));
    }
}
