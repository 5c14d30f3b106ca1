//! Reductions over spectral cubes and height maps.

use crate::scalar::Scalar;
use crate::sho::BeSpectrum;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReduceError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input")]
    Empty,
}

/// Row-major `pixels x bins` view of a spectral cube.
#[derive(Debug, Clone, Copy)]
pub struct Cube<'a, T> {
    pub data: &'a [T],
    pub pixels: usize,
    pub bins: usize,
}

impl<'a, T: Scalar> Cube<'a, T> {
    pub fn new(data: &'a [T], pixels: usize, bins: usize) -> Result<Self, ReduceError> {
        if pixels.checked_mul(bins) != Some(data.len()) {
            return Err(ReduceError::ShapeMismatch(format!(
                "{} values for {pixels} pixels x {bins} bins",
                data.len()
            )));
        }
        Ok(Self { data, pixels, bins })
    }

    pub fn spectrum(&self, pixel: usize) -> &'a [T] {
        &self.data[pixel * self.bins..(pixel + 1) * self.bins]
    }
}

/// Per-bin arithmetic mean over all pixels. When a phase cube is given its
/// per-bin circular mean fills `phase_rad`, otherwise phase is zero.
pub fn mean_spectrum<T: Scalar>(
    amplitude: Cube<'_, T>,
    phase: Option<Cube<'_, T>>,
    frequency_hz: &[T],
) -> Result<BeSpectrum<T>, ReduceError> {
    if frequency_hz.len() != amplitude.bins {
        return Err(ReduceError::ShapeMismatch(format!(
            "{} frequencies for {} bins",
            frequency_hz.len(),
            amplitude.bins
        )));
    }
    if amplitude.pixels == 0 {
        return Err(ReduceError::Empty);
    }
    if let Some(p) = &phase {
        if p.pixels != amplitude.pixels || p.bins != amplitude.bins {
            return Err(ReduceError::ShapeMismatch("phase cube differs from amplitude cube".into()));
        }
    }
    let n = T::of_usize(amplitude.pixels);
    let mut acc = vec![T::zero(); amplitude.bins];
    for px in 0..amplitude.pixels {
        for (a, &v) in acc.iter_mut().zip(amplitude.spectrum(px)) {
            *a = *a + v;
        }
    }
    let mean: Vec<T> = acc.into_iter().map(|s| s / n).collect();
    let phase_rad = match phase {
        None => vec![T::zero(); amplitude.bins],
        Some(p) => {
            let mut s = vec![T::zero(); p.bins];
            let mut c = vec![T::zero(); p.bins];
            for px in 0..p.pixels {
                for (k, &v) in p.spectrum(px).iter().enumerate() {
                    s[k] = s[k] + v.sin();
                    c[k] = c[k] + v.cos();
                }
            }
            s.into_iter().zip(c).map(|(s, c)| s.atan2(c)).collect()
        }
    };
    Ok(BeSpectrum { frequency_hz: frequency_hz.to_vec(), amplitude: mean, phase_rad })
}

/// Pixel whose peak (max over bins) amplitude is largest; ties go to the
/// smallest row-major index.
pub fn strongest_spectrum<T: Scalar>(amplitude: Cube<'_, T>) -> Result<(usize, Vec<T>), ReduceError> {
    if amplitude.pixels == 0 || amplitude.bins == 0 {
        return Err(ReduceError::Empty);
    }
    let peak = |px: usize| amplitude.spectrum(px).iter().copied().fold(T::neg_infinity(), T::max);
    let mut best = (0, peak(0));
    for px in 1..amplitude.pixels {
        let v = peak(px);
        if v > best.1 {
            best = (px, v);
        }
    }
    Ok((best.0, amplitude.spectrum(best.0).to_vec()))
}

/// Population standard deviation of all height values (no plane removal).
pub fn roughness<T: Scalar>(heights: &[T]) -> T {
    if heights.is_empty() {
        return T::zero();
    }
    // shifted by the first sample so a constant map gives exactly zero
    let k = heights[0];
    let n = T::of_usize(heights.len());
    let mean = heights.iter().map(|&h| h - k).sum::<T>() / n;
    let var = heights.iter().map(|&h| (h - k - mean) * (h - k - mean)).sum::<T>() / n;
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pixel_mean() {
        let data = [0.0, 2.0, 2.0, 0.0];
        let m = mean_spectrum(Cube::new(&data, 2, 2).unwrap(), None, &[1.0, 2.0]).unwrap();
        assert_eq!(m.amplitude, vec![1.0, 1.0]);
    }

    #[test]
    fn identical_pixels_mean_is_that_spectrum() {
        let s = [0.5, 3.0, 1.25];
        let data: Vec<f64> = s.iter().cycle().take(12).copied().collect();
        let m = mean_spectrum(Cube::new(&data, 4, 3).unwrap(), None, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.amplitude, s.to_vec());
    }

    #[test]
    fn mean_shape_mismatch() {
        let data = [0.0; 6];
        assert!(matches!(Cube::new(&data, 4, 2), Err(ReduceError::ShapeMismatch(_))));
        let c = Cube::new(&data, 3, 2).unwrap();
        assert!(matches!(mean_spectrum(c, None, &[1.0]), Err(ReduceError::ShapeMismatch(_))));
    }

    #[test]
    fn strongest_single_and_scaled() {
        let one = [1.0, 4.0, 2.0];
        assert_eq!(strongest_spectrum(Cube::new(&one, 1, 3).unwrap()).unwrap(), (0, one.to_vec()));
        let mut data = vec![1.0; 12];
        for v in &mut data[6..9] {
            *v *= 10.0;
        }
        assert_eq!(strongest_spectrum(Cube::new(&data, 4, 3).unwrap()).unwrap().0, 2);
    }

    #[test]
    fn strongest_tie_goes_to_first() {
        let data = [1.0, 5.0, 5.0, 1.0];
        assert_eq!(strongest_spectrum(Cube::new(&data, 2, 2).unwrap()).unwrap().0, 0);
        let empty: [f64; 0] = [];
        assert_eq!(strongest_spectrum(Cube::new(&empty, 0, 0).unwrap()), Err(ReduceError::Empty));
    }

    #[test]
    fn roughness_cases() {
        assert_eq!(roughness(&[2.0; 16]), 0.0);
        assert_eq!(roughness(&[0.731; 1024]), 0.0);
        let alt: Vec<f64> = (0..64).map(|i| (i % 2) as f64).collect();
        assert_eq!(roughness(&alt), 0.5);
        assert_eq!(roughness::<f32>(&[0.0, 1.0]), 0.5);
    }
}
