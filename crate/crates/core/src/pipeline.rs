//! End-to-end orchestration: simulate → (beamspace synthesis + channel
//! estimation) → calibrate → localize → map → evaluate.
//!
//! Solvers read the UE orientation from each frame's pose record. In the
//! RTT-based modes the round trip removes the clock bias, which is modelled by
//! subtracting the bias recorded for the frame.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{
    calibrate_bs, samples_from_frames, CalibrationOptions, CalibrationResult, CalibrationSample,
    PoseUncertainty, PriorBox, DEFAULT_TIE_WINDOW_S,
};
use crate::channel::{estimate_beamspace_channel, estimate_frame, ChannelEstimatorConfig};
use crate::error::{Error, Result};
use crate::eval::{align_by_timestamp, cdf_csv, compute_error_cdf, ErrorReport};
use crate::geometry::{BsState, UeState};
use crate::io;
use crate::mapping::{init_ip, refine_ip, IPEstimate, MappingOptions, PathSource};
use crate::measurement::{FrameTruth, MeasurementFrame};
use crate::positioning::{
    locate_aod_height, locate_multipath_rtt, locate_multipath_tdoa, locate_rtt_aod,
    locate_rtt_aod_aoa, PathWeighting, PositionFix, SolverMode,
};
use crate::sim::{ClockBiasModel, NoiseModel, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Simulate,
    EstimateChannel,
    Calibrate,
    Localize,
    Map,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Simulate => "simulate",
            Stage::EstimateChannel => "estimate-channel",
            Stage::Calibrate => "calibrate",
            Stage::Localize => "localize",
            Stage::Map => "map",
            Stage::Evaluate => "evaluate",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<V> {
    fn at(self, stage: Stage) -> std::result::Result<V, StageError>;
}

impl<V> AtStage<V> for Result<V> {
    fn at(self, stage: Stage) -> std::result::Result<V, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Where the scenario comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSource {
    Path(PathBuf),
    Demo { demo_frames: usize },
    Inline(Box<ScenarioConfig<f64>>),
}

fn default_tie_window() -> f64 {
    DEFAULT_TIE_WINDOW_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioSource,
    pub mode: SolverMode,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Replaces the scenario's measurement noise.
    #[serde(default)]
    pub noise: Option<NoiseModel<f64>>,
    #[serde(default)]
    pub clock_bias: Option<ClockBiasModel<f64>>,
    /// Synthesize beamspace symbols and run the channel estimator instead of
    /// perturbing path parameters directly.
    #[serde(default)]
    pub signal_level: bool,
    #[serde(default)]
    pub estimator: ChannelEstimatorConfig<f64>,
    /// Run calibration, centred on `nominal_bs`.
    #[serde(default)]
    pub calibrate: bool,
    /// Deployment pose used by the solvers (or as the calibration prior).
    /// Defaults to the scenario's true BS.
    #[serde(default)]
    pub nominal_bs: Option<BsState<f64>>,
    #[serde(default)]
    pub map: bool,
    #[serde(default)]
    pub weighting: PathWeighting,
    #[serde(default = "default_tie_window")]
    pub los_tie_window_s: f64,
}

impl RunConfig {
    pub fn new(scenario: ScenarioSource, mode: SolverMode) -> Self {
        Self {
            scenario,
            mode,
            seed: None,
            noise: None,
            clock_bias: None,
            signal_level: false,
            estimator: ChannelEstimatorConfig::default(),
            calibrate: false,
            nominal_bs: None,
            map: false,
            weighting: PathWeighting::default(),
            los_tie_window_s: DEFAULT_TIE_WINDOW_S,
        }
    }

    /// Makes a relative scenario path relative to `base`.
    pub fn resolve_relative(&mut self, base: &Path) {
        if let ScenarioSource::Path(p) = &mut self.scenario {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn load_scenario(&self) -> Result<ScenarioConfig<f64>> {
        let mut s = match &self.scenario {
            ScenarioSource::Path(p) => load_scenario_file(p)?,
            ScenarioSource::Demo { demo_frames } => ScenarioConfig::demo(*demo_frames, 0),
            ScenarioSource::Inline(s) => (**s).clone(),
        };
        if let Some(seed) = self.seed {
            s.rng_seed = seed;
        }
        if let Some(n) = self.noise {
            s.measurement_noise = n;
        }
        if let Some(b) = self.clock_bias {
            s.clock_bias = b;
        }
        s.validate()?;
        Ok(s)
    }
}

/// Accepts either a bare scenario object or a versioned `scenario` document.
pub fn load_scenario_file(path: &Path) -> Result<ScenarioConfig<f64>> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("schema_version").is_some() {
        return io::read_json(path, "scenario");
    }
    Ok(serde_json::from_value(value)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixRecord {
    pub index: usize,
    pub timestamp: f64,
    pub fix: PositionFix<f64>,
}

fn frame_truth(frame: &MeasurementFrame<f64>) -> Result<&FrameTruth<f64>> {
    frame.truth.as_ref().ok_or_else(|| {
        Error::Config(format!("frame {} carries no UE pose record", frame.index))
    })
}

/// Path-level frames, or frames re-estimated from synthesized beamspace
/// symbols (tensors written to `tensor_dir` when given).
pub fn simulate(
    scenario: &ScenarioConfig<f64>,
    signal_level: bool,
    estimator: &ChannelEstimatorConfig<f64>,
    tensor_dir: Option<&Path>,
) -> std::result::Result<Vec<MeasurementFrame<f64>>, StageError> {
    if !signal_level {
        return scenario.simulate_frames().at(Stage::Simulate);
    }
    scenario.validate().at(Stage::Simulate)?;
    let mut frames = Vec::with_capacity(scenario.trajectory.len());
    for k in 0..scenario.trajectory.len() {
        let bf = scenario.simulate_beamspace(k).at(Stage::Simulate)?;
        if let Some(dir) = tensor_dir {
            io::write_beamspace(&dir.join(format!("frame_{k:05}")), &bf.raw, k, bf.timestamp)
                .at(Stage::Simulate)?;
        }
        let tensor = estimate_beamspace_channel(&bf.raw).at(Stage::EstimateChannel)?;
        let mut frame = estimate_frame(
            &tensor,
            &scenario.bs_codebook,
            &scenario.ue_codebook,
            estimator,
            k,
            bf.timestamp,
        )
        .at(Stage::EstimateChannel)?;
        frame.truth = Some(bf.truth);
        frames.push(frame);
    }
    Ok(frames)
}

/// LOS calibration samples from frames carrying UE pose records.
pub fn calibration_samples(
    frames: &[MeasurementFrame<f64>],
    tie_window: f64,
) -> Result<Vec<CalibrationSample<f64>>> {
    let ues: Vec<UeState<f64>> = frames
        .iter()
        .map(|f| frame_truth(f).map(|t| t.ue))
        .collect::<Result<_>>()?;
    samples_from_frames(frames, &ues, tie_window, Some(PoseUncertainty::default()))
}

pub fn localize_frame(
    frame: &MeasurementFrame<f64>,
    bs: &BsState<f64>,
    mode: SolverMode,
    weighting: PathWeighting,
    tie_window: f64,
) -> Result<PositionFix<f64>> {
    let pose = frame_truth(frame)?.ue;
    let bias = pose.clock_bias;
    if frame.paths.is_empty() {
        return Err(Error::NoPaths);
    }
    let los = || -> Result<_> {
        Ok(&frame.paths[crate::calibration::select_los(frame, tie_window)?])
    };
    match mode {
        SolverMode::AodHeight => locate_aod_height(los()?, bs, pose.position.z),
        SolverMode::RttAod => {
            let mut m = los()?.clone();
            m.z.toa -= bias;
            locate_rtt_aod(&m, bs)
        }
        SolverMode::RttAodAoa => locate_rtt_aod_aoa(los()?, bs, &pose.orientation, bias),
        SolverMode::MultipathRtt => {
            locate_multipath_rtt(frame, bs, &pose.orientation, bias, weighting)
        }
        SolverMode::MultipathTdoa => locate_multipath_tdoa(frame, bs, &pose.orientation, weighting),
    }
}

pub fn localize_frames(
    frames: &[MeasurementFrame<f64>],
    bs: &BsState<f64>,
    mode: SolverMode,
    weighting: PathWeighting,
    tie_window: f64,
) -> Result<Vec<FixRecord>> {
    frames
        .iter()
        .map(|f| {
            let fix = localize_frame(f, bs, mode, weighting, tie_window)
                .map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("frame {}: {m}", f.index)),
                    other => other,
                })?;
            Ok(FixRecord {
                index: f.index,
                timestamp: f.timestamp,
                fix,
            })
        })
        .collect()
}

/// Incidence points of every non-LOS path; ray pairs too close to parallel
/// are skipped.
pub fn map_frames(
    frames: &[MeasurementFrame<f64>],
    fixes: &[FixRecord],
    bs: &BsState<f64>,
    tie_window: f64,
) -> Result<Vec<IPEstimate<f64>>> {
    let options = MappingOptions::default();
    let mut out = Vec::new();
    for rec in fixes {
        let frame = frames
            .iter()
            .find(|f| f.timestamp == rec.timestamp)
            .ok_or_else(|| Error::Alignment(format!("no frame at timestamp {}", rec.timestamp)))?;
        let pose = frame_truth(frame)?.ue;
        let bias = rec.fix.clock_bias.unwrap_or(pose.clock_bias);
        let los = crate::calibration::select_los(frame, tie_window)?;
        for (i, m) in frame.paths.iter().enumerate() {
            if i == los {
                continue;
            }
            let init = match init_ip(m, bs, &rec.fix.position, &pose.orientation) {
                Ok(p) => p,
                Err(Error::DegenerateRayPair) => continue,
                Err(e) => return Err(e),
            };
            let mut est = refine_ip(m, bs, &rec.fix.position, &pose.orientation, bias, &init, &options)?;
            est.source = Some(PathSource {
                frame: frame.index,
                path: i,
            });
            out.push(est);
        }
    }
    Ok(out)
}

pub fn evaluate(fixes: &[FixRecord], frames: &[MeasurementFrame<f64>]) -> Result<ErrorReport<f64>> {
    let truth = frames
        .iter()
        .map(|f| frame_truth(f).map(|t| (f.timestamp, t.ue.position)))
        .collect::<Result<Vec<_>>>()?;
    let est: Vec<_> = fixes.iter().map(|r| (r.timestamp, r.fix.position)).collect();
    let (e, t, missing) = align_by_timestamp(&est, &truth)?;
    let mut report = compute_error_cdf(&e, &t)?;
    report.missing = missing;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub frames: Vec<MeasurementFrame<f64>>,
    pub calibration: Option<CalibrationResult<f64>>,
    pub bs_used: BsState<f64>,
    pub fixes: Vec<FixRecord>,
    pub incidence_points: Vec<IPEstimate<f64>>,
    pub report: ErrorReport<f64>,
}

/// Names of the files written by [`run_pipeline`].
pub mod artifacts {
    pub const SCENARIO: &str = "scenario.json";
    pub const FRAMES: &str = "frames.json";
    pub const TENSORS: &str = "tensors";
    pub const SAMPLES: &str = "calibration_samples.json";
    pub const CALIBRATION: &str = "calibration.json";
    pub const BS: &str = "bs.json";
    pub const FIXES: &str = "fixes.json";
    pub const INCIDENCE_POINTS: &str = "incidence_points.json";
    pub const REPORT: &str = "report.json";
    pub const CDF: &str = "cdf.csv";
}

/// Document kinds used in the JSON envelopes.
pub mod kinds {
    pub const SCENARIO: &str = "scenario";
    pub const FRAMES: &str = "measurement_frames";
    pub const SAMPLES: &str = "calibration_samples";
    pub const CALIBRATION: &str = "calibration_result";
    pub const BS: &str = "bs_state";
    pub const FIXES: &str = "position_fixes";
    pub const INCIDENCE_POINTS: &str = "incidence_points";
    pub const REPORT: &str = "error_report";
    pub const RUN_CONFIG: &str = "run_config";
}

pub fn run_pipeline(
    config: &RunConfig,
    out_dir: Option<&Path>,
) -> std::result::Result<PipelineOutput, StageError> {
    fn save<D: Serialize>(
        dir: Option<&Path>,
        name: &str,
        kind: &str,
        data: &D,
        stage: Stage,
    ) -> std::result::Result<(), StageError> {
        match dir {
            Some(d) => io::write_json(&d.join(name), kind, data).at(stage),
            None => Ok(()),
        }
    }

    let scenario = config.load_scenario().at(Stage::Config)?;
    save(out_dir, artifacts::SCENARIO, kinds::SCENARIO, &scenario, Stage::Config)?;

    let tensor_dir = out_dir.map(|d| d.join(artifacts::TENSORS));
    let frames = simulate(
        &scenario,
        config.signal_level,
        &config.estimator,
        tensor_dir.as_deref(),
    )?;
    save(out_dir, artifacts::FRAMES, kinds::FRAMES, &frames, Stage::Simulate)?;

    let nominal = config.nominal_bs.unwrap_or(scenario.bs);
    let calibration = if config.calibrate {
        let samples = calibration_samples(&frames, config.los_tie_window_s).at(Stage::Calibrate)?;
        save(out_dir, artifacts::SAMPLES, kinds::SAMPLES, &samples, Stage::Calibrate)?;
        let result = calibrate_bs(&samples, &PriorBox::around(nominal), &CalibrationOptions::default())
            .at(Stage::Calibrate)?;
        save(out_dir, artifacts::CALIBRATION, kinds::CALIBRATION, &result, Stage::Calibrate)?;
        Some(result)
    } else {
        None
    };
    let bs = calibration.map(|c| c.bs).unwrap_or(nominal);
    save(out_dir, artifacts::BS, kinds::BS, &bs, Stage::Calibrate)?;

    let fixes = localize_frames(&frames, &bs, config.mode, config.weighting, config.los_tie_window_s)
        .at(Stage::Localize)?;
    save(out_dir, artifacts::FIXES, kinds::FIXES, &fixes, Stage::Localize)?;

    let incidence_points = if config.map {
        let ips = map_frames(&frames, &fixes, &bs, config.los_tie_window_s).at(Stage::Map)?;
        save(out_dir, artifacts::INCIDENCE_POINTS, kinds::INCIDENCE_POINTS, &ips, Stage::Map)?;
        ips
    } else {
        Vec::new()
    };

    let report = evaluate(&fixes, &frames).at(Stage::Evaluate)?;
    save(out_dir, artifacts::REPORT, kinds::REPORT, &report, Stage::Evaluate)?;
    if let Some(d) = out_dir {
        io::atomic_write(&d.join(artifacts::CDF), cdf_csv(&report).as_bytes()).at(Stage::Evaluate)?;
    }

    Ok(PipelineOutput {
        frames,
        calibration,
        bs_used: bs,
        fixes,
        incidence_points,
        report,
    })
}
