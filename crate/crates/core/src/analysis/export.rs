//! PNG heatmaps (jet colormap) and CSV emission for analysis results.

use crate::field::Grid;
use crate::sho::BeSpectrum;
use std::io::Write;
use std::path::Path;

/// Classic 'jet' colormap: blue -> cyan -> yellow -> red over `[0, 1]`.
pub fn jet(v: f64) -> [u8; 3] {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let channel = |offset: f64| (1.5 - (4.0 * v - offset).abs()).clamp(0.0, 1.0);
    [channel(3.0), channel(2.0), channel(1.0)].map(|c| (c * 255.0).round() as u8)
}

pub fn heatmap_rgb(grid: &Grid<f64>) -> image::RgbImage {
    let finite = grid.data.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut img = image::RgbImage::new(grid.cols as u32, grid.rows as u32);
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let v = (*grid.get(r, c) - lo) / span;
            img.put_pixel(c as u32, r as u32, image::Rgb(jet(v)));
        }
    }
    img
}

pub fn write_heatmap_png(grid: &Grid<f64>, path: &Path) -> image::ImageResult<()> {
    heatmap_rgb(grid).save_with_format(path, image::ImageFormat::Png)
}

/// Line plot of a spectrum's amplitude, rendered as a PNG with a white
/// background and a jet-coloured trace.
pub fn write_spectrum_png(s: &BeSpectrum<f64>, path: &Path) -> image::ImageResult<()> {
    let (w, h) = (512u32, 256u32);
    let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    let max = s.amplitude.iter().copied().fold(0.0f64, f64::max);
    let max = if max > 0.0 { max } else { 1.0 };
    let n = s.amplitude.len().max(2);
    let mut prev: Option<(i64, i64)> = None;
    for (i, &a) in s.amplitude.iter().enumerate() {
        let x = (i as f64 / (n - 1) as f64 * (w - 1) as f64).round() as i64;
        let y = ((1.0 - a / max) * (h - 1) as f64).round() as i64;
        if let Some((px, py)) = prev {
            let steps = (x - px).abs().max((y - py).abs()).max(1);
            for k in 0..=steps {
                let xx = px + (x - px) * k / steps;
                let yy = py + (y - py) * k / steps;
                img.put_pixel(xx as u32, yy.clamp(0, h as i64 - 1) as u32, image::Rgb(jet(0.1)));
            }
        }
        prev = Some((x, y));
    }
    img.save_with_format(path, image::ImageFormat::Png)
}

pub fn write_grid_csv<W: Write>(grid: &Grid<f64>, mut out: W) -> std::io::Result<()> {
    for r in 0..grid.rows {
        let line: Vec<String> = grid.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_spectrum_csv<W: Write>(s: &BeSpectrum<f64>, mut out: W) -> std::io::Result<()> {
    writeln!(out, "frequency_hz,amplitude,phase_rad")?;
    for i in 0..s.len() {
        writeln!(out, "{},{},{}", s.frequency_hz[i], s.amplitude[i], s.phase_rad[i])?;
    }
    Ok(())
}
