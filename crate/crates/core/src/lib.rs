//! Single-base-station mmWave positioning and mapping.
//!
//! The numerical core is generic over the scalar type (see [`scalar::Real`]);
//! the aliases below fix it to `f64`.
//!
//! ```
//! use mmwave_pos::{pipeline, PathWeighting, ScenarioConfig, SolverMode};
//!
//! let scenario = ScenarioConfig::demo(50, 7);
//! let frames = scenario.simulate_frames()?;
//! let fixes = pipeline::localize_frames(
//!     &frames, &scenario.bs, SolverMode::MultipathRtt, PathWeighting::Strength, 1e-9)?;
//! let report = pipeline::evaluate(&fixes, &frames)?;
//! assert!(report.mae_m < 1e-6);
//! # Ok::<(), mmwave_pos::Error>(())
//! ```

// `!(x > 0)` style checks deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod channel;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod lm;
pub mod mapping;
pub mod measurement;
pub mod pipeline;
pub mod positioning;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Real;

pub type EulerAngles = geometry::EulerAngles<f64>;
pub type BsState = geometry::BsState<f64>;
pub type UeState = geometry::UeState<f64>;
pub type IncidencePoint = geometry::IncidencePoint<f64>;
pub type MeasurementVector = geometry::MeasurementVector<f64>;
pub type PathMeasurement = measurement::PathMeasurement<f64>;
pub type MeasurementFrame = measurement::MeasurementFrame<f64>;
pub type FrameTruth = measurement::FrameTruth<f64>;
pub type Surface = sim::Surface<f64>;
pub type ScenarioConfig = sim::ScenarioConfig<f64>;
pub type NoiseModel = sim::NoiseModel<f64>;
pub type ClockBiasModel = sim::ClockBiasModel<f64>;
pub type SignalConfig = sim::SignalConfig<f64>;
pub type BeamCodebook = sim::BeamCodebook<f64>;
pub type SimPath = sim::SimPath<f64>;
pub type RawBeamspace = channel::RawBeamspace<f64>;
pub type BeamspaceTensor = channel::BeamspaceTensor<f64>;
pub type ChannelEstimatorConfig = channel::ChannelEstimatorConfig<f64>;
pub type CalibrationSample = calibration::CalibrationSample<f64>;
pub type CalibrationResult = calibration::CalibrationResult<f64>;
pub type PriorBox = calibration::PriorBox<f64>;
pub type PositionFix = positioning::PositionFix<f64>;
pub type PathLine = positioning::PathLine<f64>;
pub type IPEstimate = mapping::IPEstimate<f64>;
pub type ErrorReport = eval::ErrorReport<f64>;

pub use channel::BeamIndex;
pub use measurement::PathKind;
pub use pipeline::{run_pipeline, RunConfig, Stage, StageError};
pub use positioning::{PathWeighting, SolverMode};
