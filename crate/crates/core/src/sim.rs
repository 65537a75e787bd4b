//! Synthetic scenarios: specular path generation, path-level measurement
//! synthesis and signal-level beamspace synthesis.
//!
//! NLOS paths come from the image-source construction: the BS is mirrored
//! across each surface plane and the segment from the UE to the image is
//! intersected with the surface. Only the front face (the side the normal
//! points to) reflects, and a reflection is dropped when the hit falls outside
//! the surface extents or either leg is blocked by another surface.

use nalgebra::{Matrix3, Matrix5, Vector3, Vector5};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{BeamspaceDims, RawBeamspace};
use crate::error::{Error, Result};
use crate::geometry::{
    measurement_function, rotation_to_euler, speed_of_light, wrap_angle, BsState, EulerAngles, IncidencePoint,
    MeasurementVector, UeState,
};
use crate::measurement::{FrameTruth, MeasurementFrame, PathKind, PathMeasurement, PathTruth};
use crate::scalar::{deg, lit, Real};

/// Planar reflector, `anchor` on the plane, `normal` towards the reflecting side.
///
/// `extent[0]` is the half-width along the horizontal in-plane axis
/// `normal × ẑ`, `extent[1]` the half-width along the second in-plane axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Surface<T> {
    pub anchor: Vector3<T>,
    pub normal: Vector3<T>,
    pub extent: [T; 2],
}

impl<T: Real> Surface<T> {
    /// Builds a surface, normalizing `normal`.
    pub fn new(anchor: Vector3<T>, normal: Vector3<T>, extent: [T; 2]) -> Result<Self> {
        let n = normal.norm();
        if !(n > T::zero()) {
            return Err(Error::Config("surface normal must be nonzero".into()));
        }
        let s = Self {
            anchor,
            normal: normal / n,
            extent,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.normal.norm() - T::one()).abs() > lit(1e-9) {
            return Err(Error::Config("surface normal must be unit length".into()));
        }
        if !(self.extent[0] > T::zero() && self.extent[1] > T::zero()) {
            return Err(Error::Config("surface extents must be positive".into()));
        }
        Ok(())
    }

    /// In-plane axes matching `extent`.
    pub fn axes(&self) -> (Vector3<T>, Vector3<T>) {
        let mut u = self.normal.cross(&Vector3::z());
        if u.norm() < lit(1e-6) {
            u = self.normal.cross(&Vector3::x());
        }
        let u = u.normalize();
        let v = self.normal.cross(&u);
        (u, v)
    }

    pub fn signed_distance(&self, p: &Vector3<T>) -> T {
        (p - self.anchor).dot(&self.normal)
    }

    pub fn mirror(&self, p: &Vector3<T>) -> Vector3<T> {
        p - self.normal * (lit::<T>(2.0) * self.signed_distance(p))
    }

    /// Whether an in-plane point lies within the extents.
    pub fn contains(&self, p: &Vector3<T>) -> bool {
        let (u, v) = self.axes();
        let d = p - self.anchor;
        let tol = lit::<T>(1e-9);
        d.dot(&u).abs() <= self.extent[0] + tol && d.dot(&v).abs() <= self.extent[1] + tol
    }

    fn blocks(&self, a: &Vector3<T>, b: &Vector3<T>) -> bool {
        let da = self.signed_distance(a);
        let db = self.signed_distance(b);
        if da * db >= T::zero() {
            return false;
        }
        let t = da / (da - db);
        self.contains(&(a + (b - a) * t))
    }
}

/// Free-space power law with a per-bounce reflection loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PropagationModel<T> {
    pub carrier_hz: T,
    /// Path power at 1 m.
    pub reference_power: T,
    /// Power factor applied once per reflection.
    pub reflection_loss: T,
}

impl<T: Real> Default for PropagationModel<T> {
    fn default() -> Self {
        Self {
            carrier_hz: lit(27.2e9),
            reference_power: T::one(),
            reflection_loss: T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SimPath<T> {
    pub kind: PathKind,
    pub ip: Option<IncidencePoint<T>>,
    pub surface: Option<usize>,
    pub gain: Complex<T>,
    pub true_measurement: MeasurementVector<T>,
    /// `|gain|²`.
    pub strength: T,
}

impl<T: Real> SimPath<T> {
    pub fn truth(&self) -> PathTruth<T> {
        PathTruth {
            kind: self.kind,
            ip: self.ip,
            measurement: self.true_measurement,
            surface: self.surface,
        }
    }
}

/// LOS path plus one specular NLOS path per valid surface.
pub fn generate_paths<T: Real>(
    bs: &BsState<T>,
    ue: &UeState<T>,
    surfaces: &[Surface<T>],
) -> Result<Vec<SimPath<T>>> {
    generate_paths_with(bs, ue, surfaces, &PropagationModel::default())
}

pub fn generate_paths_with<T: Real>(
    bs: &BsState<T>,
    ue: &UeState<T>,
    surfaces: &[Surface<T>],
    model: &PropagationModel<T>,
) -> Result<Vec<SimPath<T>>> {
    let c = speed_of_light::<T>();
    let make_path = |kind, ip: Option<IncidencePoint<T>>, surface, length: T, bounces: i32| {
        let z = measurement_function(ue, bs, ip.as_ref())?;
        let strength = model.reference_power * model.reflection_loss.powi(bounces) / (length * length);
        let phase = -T::two_pi() * model.carrier_hz * length / c;
        let amp = strength.sqrt();
        Ok(SimPath {
            kind,
            ip,
            surface,
            gain: Complex::new(amp * phase.cos(), amp * phase.sin()),
            true_measurement: z,
            strength,
        })
    };

    let los_len = (bs.position - ue.position).norm();
    let mut paths = vec![make_path(PathKind::Los, None, None, los_len, 0)?];

    for (idx, s) in surfaces.iter().enumerate() {
        let d_bs = s.signed_distance(&bs.position);
        let d_ue = s.signed_distance(&ue.position);
        if !(d_bs > T::zero() && d_ue > T::zero()) {
            continue;
        }
        let image = s.mirror(&bs.position);
        let dir = image - ue.position;
        let denom = dir.dot(&s.normal);
        if denom.abs() <= T::default_epsilon() {
            continue;
        }
        let t = -d_ue / denom;
        if !(t > T::zero() && t < T::one()) {
            continue;
        }
        let hit = ue.position + dir * t;
        if !s.contains(&hit) {
            continue;
        }
        let blocked = surfaces.iter().enumerate().any(|(j, other)| {
            j != idx && (other.blocks(&bs.position, &hit) || other.blocks(&hit, &ue.position))
        });
        if blocked {
            continue;
        }
        let length = (hit - bs.position).norm() + (ue.position - hit).norm();
        match make_path(
            PathKind::Nlos,
            Some(IncidencePoint::new(hit)),
            Some(idx),
            length,
            1,
        ) {
            Ok(p) => paths.push(p),
            Err(Error::DegenerateGeometry) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(paths)
}

/// Per-component standard deviations of the measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NoiseModel<T> {
    pub toa_s: T,
    pub aoa_az: T,
    pub aoa_el: T,
    pub aod_az: T,
    pub aod_el: T,
}

impl<T: Real> Default for NoiseModel<T> {
    fn default() -> Self {
        Self::zero()
    }
}

/// Smallest standard deviations written into a frame's covariance so solvers
/// can always whiten; noise itself is drawn with the configured values.
pub const MIN_REPORTED_TOA_STD: f64 = 1e-11;
pub const MIN_REPORTED_ANGLE_STD: f64 = 1e-5;

impl<T: Real> NoiseModel<T> {
    pub fn zero() -> Self {
        Self {
            toa_s: T::zero(),
            aoa_az: T::zero(),
            aoa_el: T::zero(),
            aod_az: T::zero(),
            aod_el: T::zero(),
        }
    }

    /// Same std on all four angles.
    pub fn uniform(toa_s: T, angle: T) -> Self {
        Self {
            toa_s,
            aoa_az: angle,
            aoa_el: angle,
            aod_az: angle,
            aod_el: angle,
        }
    }

    pub fn std_array(&self) -> [T; 5] {
        [self.toa_s, self.aoa_az, self.aoa_el, self.aod_az, self.aod_el]
    }

    pub fn validate(&self) -> Result<()> {
        if self.std_array().iter().any(|s| !(*s >= T::zero())) {
            return Err(Error::Config("noise std devs must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: T) -> Self {
        let s = self.std_array().map(|v| v * factor);
        Self {
            toa_s: s[0],
            aoa_az: s[1],
            aoa_el: s[2],
            aod_az: s[3],
            aod_el: s[4],
        }
    }

    /// Diagonal covariance reported alongside noisy measurements.
    pub fn covariance(&self) -> Matrix5<T> {
        let floors = [
            MIN_REPORTED_TOA_STD,
            MIN_REPORTED_ANGLE_STD,
            MIN_REPORTED_ANGLE_STD,
            MIN_REPORTED_ANGLE_STD,
            MIN_REPORTED_ANGLE_STD,
        ];
        let s = self.std_array();
        Matrix5::from_diagonal(&Vector5::from_fn(|i, _| {
            let v = s[i].max(lit(floors[i]));
            v * v
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum ClockBiasModel<T> {
    Constant { bias_s: T },
    Jitter { mean_s: T, std_s: T },
}

impl<T: Real> Default for ClockBiasModel<T> {
    fn default() -> Self {
        ClockBiasModel::Constant { bias_s: T::zero() }
    }
}

impl<T: Real> ClockBiasModel<T> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        match *self {
            ClockBiasModel::Constant { bias_s } => bias_s,
            ClockBiasModel::Jitter { mean_s, std_s } => mean_s + std_s * normal(rng),
        }
    }
}

fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    lit(rng.sample::<f64, _>(StandardNormal))
}

/// Perturbs true path parameters with Gaussian noise and a frame clock bias.
///
/// Draw order is fixed (bias first, then each path's five components) so a
/// seeded RNG reproduces frames bit for bit.
pub fn synthesize_measurements<T: Real, R: Rng + ?Sized>(
    ue: &UeState<T>,
    paths: &[SimPath<T>],
    noise: &NoiseModel<T>,
    bias_model: &ClockBiasModel<T>,
    rng: &mut R,
) -> MeasurementFrame<T> {
    let bias = bias_model.sample(rng);
    let std = noise.std_array();
    let cov = noise.covariance();
    let half_pi = T::frac_pi_2();
    let mut measured = Vec::with_capacity(paths.len());
    let mut truths = Vec::with_capacity(paths.len());
    for p in paths {
        let mut t = p.true_measurement;
        t.toa += bias;
        let mut v = t.to_vector();
        for k in 0..5 {
            // draw even when the std is zero so streams stay aligned
            let e: T = normal(rng);
            v[k] += std[k] * e;
        }
        let mut z = MeasurementVector::from_vector(&v);
        z.aoa_az = wrap_angle(z.aoa_az);
        z.aod_az = wrap_angle(z.aod_az);
        z.aoa_el = z.aoa_el.clamp(-half_pi, half_pi);
        z.aod_el = z.aod_el.clamp(-half_pi, half_pi);
        measured.push(PathMeasurement::new(z, p.strength, cov));
        truths.push(PathTruth {
            measurement: t,
            ..p.truth()
        });
    }
    let mut truth_ue = *ue;
    truth_ue.clock_bias += bias;
    let mut frame = MeasurementFrame::new(0, T::zero(), measured);
    frame.truth = Some(FrameTruth {
        ue: truth_ue,
        association: (0..truths.len()).map(Some).collect(),
        paths: truths,
    });
    frame
}

/// Idealized main lobe of a uniform linear array factor, parameterized by its
/// 3 dB beamwidth. Zero outside the first nulls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MainLobe<T> {
    /// Full 3 dB beamwidth, radians.
    pub beamwidth: T,
}

/// `x` where `sin(x)/x = 1/√2`.
const HALF_POWER_ARG: f64 = 1.391_557_4;

impl<T: Real> MainLobe<T> {
    pub fn new(beamwidth: T) -> Self {
        Self { beamwidth }
    }

    /// Effective element count giving the configured beamwidth.
    pub fn elements(&self) -> T {
        lit::<T>(2.0 * HALF_POWER_ARG) / (T::pi() * (self.beamwidth / lit(2.0)).sin())
    }

    /// Amplitude gain for a pointing offset `delta` (radians); 1 at boresight.
    pub fn amplitude(&self, delta: T) -> T {
        let delta = wrap_angle(delta);
        if delta.abs() >= T::frac_pi_2() {
            return T::zero();
        }
        let n = self.elements();
        let psi = T::pi() * delta.sin();
        if psi.abs() >= T::two_pi() / n {
            return T::zero();
        }
        let half = psi / lit(2.0);
        if half.abs() < lit(1e-12) {
            return T::one();
        }
        (n * half).sin() / (n * half.sin())
    }
}

/// Grid codebook: beam `(e, a)` points at `(azimuths[a], elevations[e])` in the
/// array frame. A missing elevation lobe means no elevation selectivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BeamCodebook<T> {
    pub azimuths: Vec<T>,
    pub elevations: Vec<T>,
    pub az_lobe: MainLobe<T>,
    pub el_lobe: Option<MainLobe<T>>,
}

fn uniform_grid<T: Real>(n: usize, half_span: T) -> Vec<T> {
    if n == 1 {
        return vec![T::zero()];
    }
    let step = lit::<T>(2.0) * half_span / lit((n - 1) as f64);
    (0..n).map(|i| -half_span + step * lit(i as f64)).collect()
}

impl<T: Real> BeamCodebook<T> {
    /// 4 × 34 grid over ±15° elevation and ±60° azimuth, 10.4° × 4.1° beams.
    pub fn bs_default() -> Self {
        Self {
            azimuths: uniform_grid(34, deg(60.0)),
            elevations: uniform_grid(4, deg(15.0)),
            az_lobe: MainLobe::new(deg(4.1)),
            el_lobe: Some(MainLobe::new(deg(10.4))),
        }
    }

    /// 15 azimuth beams over ±45°, no elevation selectivity.
    pub fn ue_default() -> Self {
        Self {
            azimuths: uniform_grid(15, deg(45.0)),
            elevations: vec![T::zero()],
            az_lobe: MainLobe::new(deg(7.0)),
            el_lobe: None,
        }
    }

    pub fn n_az(&self) -> usize {
        self.azimuths.len()
    }

    pub fn n_el(&self) -> usize {
        self.elevations.len()
    }

    pub fn n_beams(&self) -> usize {
        self.n_az() * self.n_el()
    }

    pub fn beam_angles(&self, el_idx: usize, az_idx: usize) -> (T, T) {
        (self.azimuths[az_idx], self.elevations[el_idx])
    }

    /// Pointing angles of every beam, elevation-major.
    pub fn beams(&self) -> Vec<(T, T)> {
        let mut out = Vec::with_capacity(self.n_beams());
        for e in 0..self.n_el() {
            for a in 0..self.n_az() {
                out.push(self.beam_angles(e, a));
            }
        }
        out
    }

    pub fn az_spacing(&self) -> T {
        if self.n_az() < 2 {
            return T::zero();
        }
        self.azimuths[1] - self.azimuths[0]
    }

    pub fn el_spacing(&self) -> T {
        if self.n_el() < 2 {
            return T::zero();
        }
        self.elevations[1] - self.elevations[0]
    }

    pub fn gain(&self, el_idx: usize, az_idx: usize, azimuth: T, elevation: T) -> T {
        let (beam_az, beam_el) = self.beam_angles(el_idx, az_idx);
        let g_az = self.az_lobe.amplitude(azimuth - beam_az);
        let g_el = self
            .el_lobe
            .map(|l| l.amplitude(elevation - beam_el))
            .unwrap_or(T::one());
        g_az * g_el
    }

    pub fn validate(&self) -> Result<()> {
        if self.azimuths.is_empty() || self.elevations.is_empty() {
            return Err(Error::Config("codebook must have at least one beam".into()));
        }
        Ok(())
    }
}

/// OFDM numerology and receiver noise of the beam sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SignalConfig<T> {
    pub carrier_hz: T,
    pub subcarrier_spacing_hz: T,
    /// Absolute subcarrier indices carrying pilots.
    pub active_subcarriers: Vec<u32>,
    pub n_bs_beams: usize,
    pub n_ue_beams: usize,
    /// Per-sample complex noise variance.
    pub noise_power: T,
}

impl<T: Real> Default for SignalConfig<T> {
    /// 27.2 GHz, 120 kHz spacing, pilots on every fourth of 4 × 792 subcarriers.
    fn default() -> Self {
        Self {
            carrier_hz: lit(27.2e9),
            subcarrier_spacing_hz: lit(120e3),
            active_subcarriers: (0..4 * 198).map(|m| 4 * m).collect(),
            n_bs_beams: 4 * 34,
            n_ue_beams: 15,
            noise_power: lit(1e-9),
        }
    }
}

impl<T: Real> SignalConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.active_subcarriers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "subcarrier indices must be strictly increasing".into(),
            ));
        }
        if self.n_bs_beams == 0 || self.n_ue_beams == 0 {
            return Err(Error::Config("beam counts must be positive".into()));
        }
        if !(self.noise_power >= T::zero()) {
            return Err(Error::Config("noise power must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Received symbols `y = Σ ρ·g_UE·g_BS·e^{−j2πκΔfτ}·p + n` for every
/// (UE beam, BS elevation beam, BS azimuth beam, subcarrier).
pub fn synthesize_beamspace<T: Real, R: Rng + ?Sized>(
    paths: &[SimPath<T>],
    bs_codebook: &BeamCodebook<T>,
    ue_codebook: &BeamCodebook<T>,
    signal: &SignalConfig<T>,
    rng: &mut R,
) -> Result<RawBeamspace<T>> {
    signal.validate()?;
    bs_codebook.validate()?;
    ue_codebook.validate()?;
    if bs_codebook.n_beams() != signal.n_bs_beams || ue_codebook.n_beams() != signal.n_ue_beams {
        return Err(Error::Config(format!(
            "codebook beam counts ({} BS, {} UE) do not match signal config ({} BS, {} UE)",
            bs_codebook.n_beams(),
            ue_codebook.n_beams(),
            signal.n_bs_beams,
            signal.n_ue_beams
        )));
    }
    let dims = BeamspaceDims {
        n_ue: ue_codebook.n_beams(),
        n_el: bs_codebook.n_el(),
        n_az: bs_codebook.n_az(),
        n_subcarriers: signal.active_subcarriers.len(),
    };
    let n_sc = dims.n_subcarriers;

    // per-path frequency response over the active subcarriers
    let phasors: Vec<Vec<Complex<T>>> = paths
        .iter()
        .map(|p| {
            signal
                .active_subcarriers
                .iter()
                .map(|&k| {
                    let ph = -T::two_pi()
                        * lit::<T>(k as f64)
                        * signal.subcarrier_spacing_hz
                        * p.true_measurement.toa;
                    p.gain * Complex::new(ph.cos(), ph.sin())
                })
                .collect()
        })
        .collect();

    let qpsk = lit::<T>(std::f64::consts::FRAC_1_SQRT_2);
    let noise_std = (signal.noise_power / lit(2.0)).sqrt();
    let mut received = Vec::with_capacity(dims.len());
    let mut pilots = Vec::with_capacity(dims.len());
    let mut weights = vec![T::zero(); paths.len()];

    for g1 in 0..dims.n_ue {
        let (ue_el_idx, ue_az_idx) = (g1 / ue_codebook.n_az(), g1 % ue_codebook.n_az());
        for g2 in 0..dims.n_el {
            for g3 in 0..dims.n_az {
                for (w, p) in weights.iter_mut().zip(paths) {
                    let z = &p.true_measurement;
                    *w = ue_codebook.gain(ue_el_idx, ue_az_idx, z.aoa_az, z.aoa_el)
                        * bs_codebook.gain(g2, g3, z.aod_az, z.aod_el);
                }
                for s in 0..n_sc {
                    let mut h = Complex::new(T::zero(), T::zero());
                    for (w, ph) in weights.iter().zip(&phasors) {
                        if *w != T::zero() {
                            h += ph[s] * *w;
                        }
                    }
                    let bits: u8 = rng.random::<u8>() & 3;
                    let re = if bits & 1 == 0 { qpsk } else { -qpsk };
                    let im = if bits & 2 == 0 { qpsk } else { -qpsk };
                    let pilot = Complex::new(re, im);
                    let mut y = h * pilot;
                    if noise_std > T::zero() {
                        y += Complex::new(noise_std * normal(rng), noise_std * normal(rng));
                    }
                    received.push(y);
                    pilots.push(pilot);
                }
            }
        }
    }

    Ok(RawBeamspace {
        dims,
        subcarriers: signal.active_subcarriers.clone(),
        subcarrier_spacing_hz: signal.subcarrier_spacing_hz,
        received,
        pilots,
    })
}

/// Orientation whose array boresight points along `direction` with the
/// array's local y axis kept horizontal, under the `q = R·(target − origin)`
/// convention.
pub fn orientation_facing<T: Real>(direction: &Vector3<T>) -> EulerAngles<T> {
    let d = direction.normalize();
    let mut side = Vector3::z().cross(&d);
    if side.norm() < lit(1e-9) {
        side = Vector3::y();
    }
    let side = side.normalize();
    let up = d.cross(&side);
    let rot = Matrix3::from_rows(&[d.transpose(), side.transpose(), up.transpose()]);
    rotation_to_euler(&rot)
}

/// Full description of a synthetic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ScenarioConfig<T> {
    pub bs: BsState<T>,
    /// Frame period Δ, seconds.
    pub period_s: T,
    pub trajectory: Vec<UeState<T>>,
    #[serde(default)]
    pub surfaces: Vec<Surface<T>>,
    #[serde(default)]
    pub measurement_noise: NoiseModel<T>,
    #[serde(default)]
    pub clock_bias: ClockBiasModel<T>,
    #[serde(default)]
    pub signal: SignalConfig<T>,
    #[serde(default = "BeamCodebook::bs_default")]
    pub bs_codebook: BeamCodebook<T>,
    #[serde(default = "BeamCodebook::ue_default")]
    pub ue_codebook: BeamCodebook<T>,
    #[serde(default)]
    pub propagation: PropagationModel<T>,
    pub rng_seed: u64,
}

/// Ground truth and raw symbols of one signal-level frame.
#[derive(Debug, Clone)]
pub struct BeamspaceFrame<T: Real> {
    pub index: usize,
    pub timestamp: T,
    pub raw: RawBeamspace<T>,
    pub truth: FrameTruth<T>,
}

impl<T: Real> ScenarioConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.trajectory.is_empty() {
            return Err(Error::Config("trajectory must not be empty".into()));
        }
        self.measurement_noise.validate()?;
        for s in &self.surfaces {
            s.validate()?;
        }
        if let ClockBiasModel::Jitter { std_s, .. } = self.clock_bias {
            if !(std_s >= T::zero()) {
                return Err(Error::Config("clock jitter std must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// Independent RNG stream for frame `k`.
    pub fn frame_rng(&self, k: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(k as u64);
        rng
    }

    pub fn timestamp(&self, k: usize) -> T {
        self.period_s * lit(k as f64)
    }

    pub fn paths(&self, k: usize) -> Result<Vec<SimPath<T>>> {
        generate_paths_with(&self.bs, &self.trajectory[k], &self.surfaces, &self.propagation)
    }

    /// Path-level frame `k`.
    pub fn simulate_frame(&self, k: usize) -> Result<MeasurementFrame<T>> {
        let ue = &self.trajectory[k];
        let paths = self.paths(k)?;
        let mut rng = self.frame_rng(k);
        let mut frame =
            synthesize_measurements(ue, &paths, &self.measurement_noise, &self.clock_bias, &mut rng);
        frame.index = k;
        frame.timestamp = self.timestamp(k);
        Ok(frame)
    }

    pub fn simulate_frames(&self) -> Result<Vec<MeasurementFrame<T>>> {
        self.validate()?;
        (0..self.trajectory.len())
            .map(|k| self.simulate_frame(k))
            .collect()
    }

    /// Signal-level frame `k`: the frame clock bias is drawn first and added
    /// to every path delay before the symbols are synthesized.
    pub fn simulate_beamspace(&self, k: usize) -> Result<BeamspaceFrame<T>> {
        let ue = &self.trajectory[k];
        let mut paths = self.paths(k)?;
        let mut rng = self.frame_rng(k);
        let bias = self.clock_bias.sample(&mut rng);
        for p in &mut paths {
            p.true_measurement.toa += bias;
        }
        let raw = synthesize_beamspace(
            &paths,
            &self.bs_codebook,
            &self.ue_codebook,
            &self.signal,
            &mut rng,
        )?;
        let mut truth_ue = *ue;
        truth_ue.clock_bias += bias;
        Ok(BeamspaceFrame {
            index: k,
            timestamp: self.timestamp(k),
            raw,
            truth: FrameTruth {
                ue: truth_ue,
                paths: paths.iter().map(SimPath::truth).collect(),
                association: Vec::new(),
            },
        })
    }

    /// A drive past a roadside BS: a slightly curved track at 85–130 m from a
    /// 21 m mast, UE arrays facing the mast, two building facades.
    pub fn demo(n_frames: usize, seed: u64) -> Self {
        let bs_pos = Vector3::new(T::zero(), T::zero(), lit(21.0));
        let start = Vector3::new(lit::<T>(-60.0), lit(75.0), T::one());
        let end = Vector3::new(lit::<T>(60.0), lit(95.0), T::one());
        let centre = (start + end) / lit::<T>(2.0);
        let bs = BsState::new(bs_pos, orientation_facing(&(centre - bs_pos)));
        let along = end - start;
        let bend = Vector3::new(-along.y, along.x, T::zero()).normalize() * lit::<T>(8.0);
        let trajectory = (0..n_frames)
            .map(|k| {
                let f = if n_frames > 1 {
                    lit::<T>(k as f64 / (n_frames - 1) as f64)
                } else {
                    lit(0.5)
                };
                // a gentle curve keeps the track from being collinear
                let p = start + (end - start) * f + bend * (T::pi() * f).sin();
                let mut to_bs = bs_pos - p;
                to_bs.z = T::zero();
                UeState::new(p, orientation_facing(&to_bs), T::zero())
            })
            .collect();
        let facade = |anchor: Vector3<T>, normal: Vector3<T>, half_width: f64| {
            Surface::new(anchor, normal, [lit(half_width), lit(15.0)]).expect("valid facade")
        };
        Self {
            bs,
            period_s: lit(0.1),
            trajectory,
            surfaces: vec![
                facade(
                    Vector3::new(T::zero(), lit(125.0), lit(10.0)),
                    Vector3::new(T::zero(), -T::one(), T::zero()),
                    150.0,
                ),
                facade(
                    Vector3::new(lit(90.0), lit(80.0), lit(10.0)),
                    Vector3::new(-T::one(), T::zero(), T::zero()),
                    80.0,
                ),
            ],
            measurement_noise: NoiseModel::zero(),
            clock_bias: ClockBiasModel::default(),
            signal: SignalConfig::default(),
            bs_codebook: BeamCodebook::bs_default(),
            ue_codebook: BeamCodebook::ue_default(),
            propagation: PropagationModel::default(),
            rng_seed: seed,
        }
    }
}
