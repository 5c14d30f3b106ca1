//! Simulated band-excitation piezoresponse force microscope with an
//! automation stack on top: control operations, analyses, a declarative
//! workflow engine, a replayable experiment log and a language interface
//! that turns instructions into validated plans.

pub mod analysis;
pub mod assistant;
pub mod be;
pub mod control;
pub mod dataset;
pub mod experiment_log;
pub mod field;
pub mod fit;
pub mod instrument;
pub mod scalar;
pub mod sho;
pub mod tools;
pub mod trajectory;
pub mod workflow;

pub use be::{BeParams, ExcitationWaveform, PartialBeParams};
pub use control::{ApiError, CancelToken, EventSink, Microscope, MicroscopeConfig};
pub use dataset::{Dataset, DatasetStore};
pub use experiment_log::{ExperimentLog, LogRecord};
pub use field::Grid;
pub use instrument::{IoConfig, SampleConfig, VirtualInstrument};
pub use scalar::Scalar;
pub use workflow::{parse_plan, WorkflowPlan};

/// `f64` instantiations of the generic numerical types.
pub type ShoParams = sho::ShoParams<f64>;
pub type BeSpectrum = sho::BeSpectrum<f64>;
pub type ShoFit = fit::ShoFit<f64>;
pub type ScanTrajectory = trajectory::ScanTrajectory<f64>;
pub type FlowerParams = trajectory::FlowerParams<f64>;
pub type SpiralParams = trajectory::SpiralParams<f64>;
pub type Region = trajectory::Region<f64>;

/// `f32` instantiations for memory-bound map processing.
pub type ShoParams32 = sho::ShoParams<f32>;
pub type BeSpectrum32 = sho::BeSpectrum<f32>;
pub type ScanTrajectory32 = trajectory::ScanTrajectory<f32>;
