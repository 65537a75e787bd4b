use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};

use mmwave_pos::channel::{estimate_beamspace_channel, estimate_frame};
use mmwave_pos::io::{self, list_tensors, read_beamspace, read_json, write_json};
use mmwave_pos::pipeline::{
    self, artifacts, kinds, load_scenario_file, FixRecord, ScenarioSource,
};
use mmwave_pos::{
    calibration, BsState, CalibrationResult, CalibrationSample, ChannelEstimatorConfig,
    IPEstimate, MeasurementFrame, PathWeighting, PriorBox, RunConfig, ScenarioConfig, SolverMode,
    Stage, StageError,
};

#[derive(Parser)]
#[command(name = "mmpos", version, about = "Single-BS mmWave positioning and mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (meaning depends on the subcommand).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// RNG seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate measurement frames from a scenario (or the built-in demo).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Frame count of the built-in demo scenario when no --config is given.
        #[arg(long, default_value_t = 50)]
        frames: usize,
        /// Synthesize beamspace tensors and estimate frames from them.
        #[arg(long)]
        signal_level: bool,
    },
    /// Estimate path parameters from tensor files.
    EstimateChannel {
        #[command(flatten)]
        common: Common,
        /// Directory of tensor sidecars.
        #[arg(long)]
        input: PathBuf,
        /// Frames whose pose records are attached by timestamp.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fit the BS pose to LOS calibration samples.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
        /// Prior centre (BS state document); defaults to the scenario's BS.
        #[arg(long)]
        prior: Option<PathBuf>,
    },
    /// Compute a position fix per frame.
    Localize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_mode)]
        mode: SolverMode,
        #[arg(long)]
        frames: PathBuf,
        /// BS state or calibration result; defaults to the scenario's BS.
        #[arg(long)]
        bs: Option<PathBuf>,
        #[arg(long)]
        uniform_weights: bool,
    },
    /// Estimate incidence points of NLOS paths.
    Map {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        fixes: PathBuf,
        #[arg(long)]
        bs: Option<PathBuf>,
    },
    /// Error CDF of fixes against frame ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        fixes: PathBuf,
    },
    /// Run every stage from a run configuration.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Overrides the configured solver mode.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<SolverMode>,
    },
}

fn parse_mode(s: &str) -> Result<SolverMode, String> {
    s.parse().map_err(|_| {
        let names: Vec<_> = SolverMode::ALL.iter().map(|m| m.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn stage(stage: Stage) -> impl FnOnce(mmwave_pos::Error) -> anyhow::Error {
    move |source| StageError { stage, source }.into()
}

fn load_scenario(common: &Common, demo_frames: usize) -> anyhow::Result<ScenarioConfig> {
    let mut s = match &common.config {
        Some(p) => load_scenario_file(p).map_err(stage(Stage::Config))?,
        None => ScenarioConfig::demo(demo_frames, 0),
    };
    if let Some(seed) = common.seed {
        s.rng_seed = seed;
    }
    s.validate().map_err(stage(Stage::Config))?;
    Ok(s)
}

fn read_bs(path: Option<&Path>, common: &Common) -> anyhow::Result<BsState> {
    let Some(path) = path else {
        return Ok(load_scenario(common, 1)?.bs);
    };
    match read_json::<BsState>(path, kinds::BS) {
        Ok(bs) => Ok(bs),
        Err(_) => {
            let c: CalibrationResult = read_json(path, kinds::CALIBRATION).map_err(|e| StageError {
                stage: Stage::Config,
                source: mmwave_pos::Error::Config(format!(
                    "{} is neither a BS state nor a calibration result ({e})",
                    path.display()
                )),
            })?;
            Ok(c.bs)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { common, frames, signal_level } => {
            let scenario = load_scenario(&common, frames)?;
            write_json(&common.out.join(artifacts::SCENARIO), kinds::SCENARIO, &scenario)
                .map_err(stage(Stage::Simulate))?;
            let tensors = common.out.join(artifacts::TENSORS);
            let result = pipeline::simulate(
                &scenario,
                signal_level,
                &ChannelEstimatorConfig::default(),
                signal_level.then_some(tensors.as_path()),
            )?;
            write_json(&common.out.join(artifacts::FRAMES), kinds::FRAMES, &result)
                .map_err(stage(Stage::Simulate))?;
            let samples = pipeline::calibration_samples(&result, calibration::DEFAULT_TIE_WINDOW_S)
                .map_err(stage(Stage::Simulate))?;
            write_json(&common.out.join(artifacts::SAMPLES), kinds::SAMPLES, &samples)
                .map_err(stage(Stage::Simulate))?;
            println!("wrote {} frames to {}", result.len(), common.out.display());
        }
        Command::EstimateChannel { common, input, truth } => {
            let scenario = load_scenario(&common, 1)?;
            let truth_frames: Option<Vec<MeasurementFrame>> = truth
                .map(|p| read_json(&p, kinds::FRAMES))
                .transpose()
                .map_err(stage(Stage::Config))?;
            let mut frames = Vec::new();
            for side in list_tensors(&input).map_err(stage(Stage::EstimateChannel))? {
                let (header, raw) = read_beamspace::<f64>(&side).map_err(stage(Stage::EstimateChannel))?;
                let tensor = estimate_beamspace_channel(&raw).map_err(stage(Stage::EstimateChannel))?;
                let mut frame = estimate_frame(
                    &tensor,
                    &scenario.bs_codebook,
                    &scenario.ue_codebook,
                    &ChannelEstimatorConfig::default(),
                    header.index,
                    header.timestamp,
                )
                .map_err(stage(Stage::EstimateChannel))?;
                if let Some(t) = &truth_frames {
                    frame.truth = t
                        .iter()
                        .find(|f| f.timestamp == frame.timestamp)
                        .and_then(|f| f.truth.clone());
                }
                frames.push(frame);
            }
            if frames.is_empty() {
                bail!(StageError { stage: Stage::EstimateChannel, source: mmwave_pos::Error::NoData });
            }
            write_json(&common.out.join(artifacts::FRAMES), kinds::FRAMES, &frames)
                .map_err(stage(Stage::EstimateChannel))?;
            println!("estimated {} frames", frames.len());
        }
        Command::Calibrate { common, samples, prior } => {
            let samples: Vec<CalibrationSample> =
                read_json(&samples, kinds::SAMPLES).map_err(stage(Stage::Config))?;
            let center = read_bs(prior.as_deref(), &common)?;
            let result = calibration::calibrate_bs(
                &samples,
                &PriorBox::around(center),
                &calibration::CalibrationOptions::default(),
            )
            .map_err(stage(Stage::Calibrate))?;
            write_json(&common.out.join(artifacts::CALIBRATION), kinds::CALIBRATION, &result)
                .map_err(stage(Stage::Calibrate))?;
            write_json(&common.out.join(artifacts::BS), kinds::BS, &result.bs)
                .map_err(stage(Stage::Calibrate))?;
            let p = result.bs.position;
            let o = result.bs.orientation;
            println!(
                "position [{:.3}, {:.3}, {:.3}] m, orientation [{:.3}, {:.3}, {:.3}] deg, cost {:.3e}, converged {}",
                p.x, p.y, p.z,
                o.roll.to_degrees(), o.pitch.to_degrees(), o.yaw.to_degrees(),
                result.final_cost, result.converged
            );
        }
        Command::Localize { common, mode, frames, bs, uniform_weights } => {
            let frames: Vec<MeasurementFrame> = read_json(&frames, kinds::FRAMES).map_err(stage(Stage::Config))?;
            let bs = read_bs(bs.as_deref(), &common)?;
            let weighting = if uniform_weights { PathWeighting::Uniform } else { PathWeighting::Strength };
            let fixes = pipeline::localize_frames(&frames, &bs, mode, weighting, calibration::DEFAULT_TIE_WINDOW_S)
                .map_err(stage(Stage::Localize))?;
            write_json(&common.out.join(artifacts::FIXES), kinds::FIXES, &fixes)
                .map_err(stage(Stage::Localize))?;
            println!("{} fixes ({mode})", fixes.len());
        }
        Command::Map { common, frames, fixes, bs } => {
            let frames: Vec<MeasurementFrame> = read_json(&frames, kinds::FRAMES).map_err(stage(Stage::Config))?;
            let fixes: Vec<FixRecord> = read_json(&fixes, kinds::FIXES).map_err(stage(Stage::Config))?;
            let bs = read_bs(bs.as_deref(), &common)?;
            let ips: Vec<IPEstimate> = pipeline::map_frames(&frames, &fixes, &bs, calibration::DEFAULT_TIE_WINDOW_S)
                .map_err(stage(Stage::Map))?;
            write_json(&common.out.join(artifacts::INCIDENCE_POINTS), kinds::INCIDENCE_POINTS, &ips)
                .map_err(stage(Stage::Map))?;
            println!("{} incidence points", ips.len());
        }
        Command::Evaluate { common, frames, fixes } => {
            let frames: Vec<MeasurementFrame> = read_json(&frames, kinds::FRAMES).map_err(stage(Stage::Config))?;
            let fixes: Vec<FixRecord> = read_json(&fixes, kinds::FIXES).map_err(stage(Stage::Config))?;
            let report = pipeline::evaluate(&fixes, &frames).map_err(stage(Stage::Evaluate))?;
            write_report(&common.out, &report)?;
        }
        Command::Pipeline { common, mode } => {
            let mut config = match &common.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(mmwave_pos::Error::from)
                        .map_err(stage(Stage::Config))?;
                    let mut c: RunConfig = serde_json::from_str(&text)
                        .map_err(mmwave_pos::Error::from)
                        .map_err(stage(Stage::Config))?;
                    c.resolve_relative(p.parent().unwrap_or(Path::new(".")));
                    c
                }
                None => RunConfig::new(ScenarioSource::Demo { demo_frames: 50 }, SolverMode::RttAodAoa),
            };
            if let Some(m) = mode {
                config.mode = m;
            }
            if common.seed.is_some() {
                config.seed = common.seed;
            }
            write_json(&common.out.join("run_config.json"), kinds::RUN_CONFIG, &config)
                .map_err(stage(Stage::Config))?;
            let out = pipeline::run_pipeline(&config, Some(&common.out))?;
            print_summary(&out.report);
        }
    }
    Ok(())
}

fn write_report(out: &Path, report: &mmwave_pos::ErrorReport) -> anyhow::Result<()> {
    write_json(&out.join(artifacts::REPORT), kinds::REPORT, report).map_err(stage(Stage::Evaluate))?;
    io::atomic_write(&out.join(artifacts::CDF), mmwave_pos::eval::cdf_csv(report).as_bytes())
        .map_err(stage(Stage::Evaluate))?;
    print_summary(report);
    Ok(())
}

fn print_summary(report: &mmwave_pos::ErrorReport) {
    println!("frames {}  MAE {:.3} m", report.errors_m.len(), report.mae_m);
    for p in &report.percentiles {
        println!("  {:>4.0}% below {:.3} m", p.quantile * 100.0, p.error_m);
    }
    for t in &report.fraction_below {
        println!("  below {:>4.1} m: {:.1}%", t.threshold_m, t.fraction * 100.0);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
