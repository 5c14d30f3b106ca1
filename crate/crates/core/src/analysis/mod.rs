//! Data analyses over acquired datasets: SHO fit maps, domain-wall
//! detection, spectral reductions, roughness and drive-waveform synthesis.

pub mod canny;
pub mod export;
pub mod reduce;
pub mod waveform;

pub use canny::{detect_domain_walls, CannyError, CannyParams, WallDetection};
pub use reduce::{mean_spectrum, roughness, strongest_spectrum, Cube, ReduceError};
pub use waveform::{excitation_waveform, TimeSeries};

pub use crate::fit::{fit_sho, FitError, ShoFit};

use crate::dataset::{Dataset, DatasetError};
use crate::field::Grid;

/// Reshapes a channel (row-major) to `rows x cols`.
pub fn extract_channel_image(ds: &Dataset, channel: &str, rows: usize, cols: usize) -> Result<Grid<f64>, DatasetError> {
    ds.channel_image(channel, rows, cols)
}
