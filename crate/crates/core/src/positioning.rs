//! UE position solvers: three single-path LOS modes and two multipath
//! closed-form least-squares modes.
//!
//! Every NLOS path constrains the UE to a line. With `u_BS` the global
//! departure direction, `u_UE` the global arrival direction (pointing from the
//! UE towards where the signal came from) and `d` the unfolded path length,
//! the UE satisfies `p = μ + s·ν` for some `s`, where `μ = p_BS − d·u_UE` and
//! `ν = u_BS + u_UE`. For the LOS path `ν` vanishes and `μ` is the UE itself.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    arrival_direction, measurement_function, speed_of_light, BsState, EulerAngles, UeState,
};
use crate::lm::{minimize, LmOptions};
use crate::measurement::{MeasurementFrame, PathMeasurement, UNINFORMATIVE_ELEVATION_VARIANCE};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMode {
    AodHeight,
    RttAod,
    RttAodAoa,
    MultipathRtt,
    MultipathTdoa,
}

impl SolverMode {
    pub const ALL: [SolverMode; 5] = [
        SolverMode::AodHeight,
        SolverMode::RttAod,
        SolverMode::RttAodAoa,
        SolverMode::MultipathRtt,
        SolverMode::MultipathTdoa,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SolverMode::AodHeight => "aod-height",
            SolverMode::RttAod => "rtt-aod",
            SolverMode::RttAodAoa => "rtt-aod-aoa",
            SolverMode::MultipathRtt => "multipath-rtt",
            SolverMode::MultipathTdoa => "multipath-tdoa",
        }
    }
}

impl fmt::Display for SolverMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown solver mode {s:?}")))
    }
}

/// Estimated UE position. The known-height mode reports the given height as z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PositionFix<T> {
    pub position: Vector3<T>,
    /// Seconds; only the TDOA mode estimates it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_bias: Option<T>,
    pub mode: SolverMode,
    pub residual_cost: T,
    pub n_paths_used: usize,
    pub converged: bool,
}

impl<T: Real> PositionFix<T> {
    fn closed_form(position: Vector3<T>, mode: SolverMode, cost: T, n: usize) -> Self {
        Self {
            position,
            clock_bias: None,
            mode,
            residual_cost: cost,
            n_paths_used: n,
            converged: true,
        }
    }
}

/// How multipath solvers weight each path line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathWeighting {
    /// Measured path strength.
    #[default]
    Strength,
    Uniform,
}

impl PathWeighting {
    fn weight<T: Real>(&self, m: &PathMeasurement<T>) -> T {
        match self {
            PathWeighting::Strength => m.strength,
            PathWeighting::Uniform => T::one(),
        }
    }
}

/// Below this `‖ν‖` a line is treated as the point `μ`.
pub const DEGENERATE_LINE_NORM: f64 = 1e-3;
/// Largest accepted condition number of a multipath normal matrix.
pub const MAX_CONDITION: f64 = 1e8;
/// Smallest accepted `|u_z|` of the AOD ray in the known-height mode.
pub const GRAZING_EPS: f64 = 1e-6;

fn departure<T: Real>(m: &PathMeasurement<T>, bs: &BsState<T>) -> Vector3<T> {
    bs.departure_direction(m.z.aod_az, m.z.aod_el)
}

/// `p = p_BS + τc·u_BS`, τ already free of clock bias.
pub fn locate_rtt_aod<T: Real>(meas: &PathMeasurement<T>, bs: &BsState<T>) -> Result<PositionFix<T>> {
    let d = meas.z.toa * speed_of_light::<T>();
    if !(d > T::zero()) {
        return Err(Error::InvalidRange);
    }
    let p = bs.position + departure(meas, bs) * d;
    Ok(PositionFix::closed_form(p, SolverMode::RttAod, T::zero(), 1))
}

/// Intersects the AOD ray with the horizontal plane `z = ue_height`.
pub fn locate_aod_height<T: Real>(
    meas: &PathMeasurement<T>,
    bs: &BsState<T>,
    ue_height: T,
) -> Result<PositionFix<T>> {
    let u = departure(meas, bs);
    if u.z.abs() <= lit(GRAZING_EPS) {
        return Err(Error::GrazingRay);
    }
    let scale = (ue_height - bs.position.z) / u.z;
    if scale < T::zero() {
        // the plane lies behind the array
        return Err(Error::InvalidRange);
    }
    let p = Vector3::new(
        bs.position.x + scale * u.x,
        bs.position.y + scale * u.y,
        ue_height,
    );
    Ok(PositionFix::closed_form(p, SolverMode::AodHeight, T::zero(), 1))
}

fn whitener<T: Real>(cov: &nalgebra::Matrix5<T>) -> Result<nalgebra::Matrix5<T>> {
    let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
    chol.l().try_inverse().ok_or(Error::SingularCovariance)
}

/// Options of the iterative LOS solver: 100 iterations, gradient tolerance 1e−10.
pub fn los_ls_options<T: Real>() -> LmOptions<T> {
    LmOptions {
        max_iterations: 100,
        gradient_tol: lit(1e-10),
        ..LmOptions::default()
    }
}

/// Mahalanobis fit of the full LOS measurement over the UE position, with
/// orientation and clock bias known. Starts from [`locate_rtt_aod`].
pub fn locate_los_ls<T: Real>(
    meas: &PathMeasurement<T>,
    bs: &BsState<T>,
    ue_orientation: &EulerAngles<T>,
    clock_bias: T,
) -> Result<PositionFix<T>> {
    locate_los_ls_with(meas, bs, ue_orientation, clock_bias, &los_ls_options())
}

pub fn locate_los_ls_with<T: Real>(
    meas: &PathMeasurement<T>,
    bs: &BsState<T>,
    ue_orientation: &EulerAngles<T>,
    clock_bias: T,
    options: &LmOptions<T>,
) -> Result<PositionFix<T>> {
    let w = whitener(&meas.covariance)?;
    let mut corrected = meas.clone();
    corrected.z.toa -= clock_bias;
    let init = locate_rtt_aod(&corrected, bs)?.position;
    let z = meas.z;
    let residual = |x: &DVector<T>| {
        let ue = UeState::new(Vector3::new(x[0], x[1], x[2]), *ue_orientation, clock_bias);
        match measurement_function(&ue, bs, None) {
            Ok(h) => DVector::from_column_slice((w * h.residual(&z)).as_slice()),
            Err(_) => DVector::from_element(5, lit(1e12)),
        }
    };
    let report = minimize(residual, &DVector::from_column_slice(init.as_slice()), None, options);
    Ok(PositionFix {
        position: Vector3::new(report.params[0], report.params[1], report.params[2]),
        clock_bias: None,
        mode: SolverMode::RttAodAoa,
        residual_cost: report.cost,
        n_paths_used: 1,
        converged: report.converged,
    })
}

/// LOS fit on delay, AOD and AOA azimuth only: the AOA elevation is given an
/// uninformative variance.
pub fn locate_rtt_aod_aoa<T: Real>(
    meas: &PathMeasurement<T>,
    bs: &BsState<T>,
    ue_orientation: &EulerAngles<T>,
    clock_bias: T,
) -> Result<PositionFix<T>> {
    let m = meas.with_aoa_el_variance(lit(UNINFORMATIVE_ELEVATION_VARIANCE));
    locate_los_ls(&m, bs, ue_orientation, clock_bias)
}

/// Line `{μ + s·ν}` of candidate UE positions for one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PathLine<T> {
    pub mu: Vector3<T>,
    pub nu: Vector3<T>,
    pub weight: T,
    pub degenerate: bool,
    pub u_bs: Vector3<T>,
    pub u_ue: Vector3<T>,
    /// Unfolded path length `(τ − b)c`.
    pub range: T,
}

impl<T: Real> PathLine<T> {
    /// Projector onto the plane orthogonal to the line (identity when degenerate).
    pub fn projector(&self) -> Matrix3<T> {
        if self.degenerate {
            Matrix3::identity()
        } else {
            let n = self.nu.normalize();
            Matrix3::identity() - n * n.transpose()
        }
    }

    pub fn distance_sq(&self, p: &Vector3<T>) -> T {
        let d = p - self.mu;
        (self.projector() * d).norm_squared()
    }
}

pub fn build_path_line<T: Real>(
    meas: &PathMeasurement<T>,
    bs: &BsState<T>,
    ue_orientation: &EulerAngles<T>,
    clock_bias: T,
) -> PathLine<T> {
    build_weighted_line(meas, bs, ue_orientation, clock_bias, meas.strength)
}

fn build_weighted_line<T: Real>(
    meas: &PathMeasurement<T>,
    bs: &BsState<T>,
    ue_orientation: &EulerAngles<T>,
    clock_bias: T,
    weight: T,
) -> PathLine<T> {
    let range = (meas.z.toa - clock_bias) * speed_of_light::<T>();
    let u_bs = departure(meas, bs);
    let u_ue = arrival_direction(ue_orientation, meas.z.aoa_az, meas.z.aoa_el);
    let nu = u_bs + u_ue;
    PathLine {
        mu: bs.position - u_ue * range,
        nu,
        weight,
        degenerate: nu.norm() < lit(DEGENERATE_LINE_NORM),
        u_bs,
        u_ue,
        range,
    }
}

fn condition_number<T: Real>(m: &DMatrix<T>) -> T {
    let sv = m.clone().singular_values();
    let max = sv.iter().fold(T::zero(), |a, v| a.max(*v));
    let min = sv.iter().fold(T::max_value().unwrap(), |a, v| a.min(*v));
    if min > T::zero() {
        max / min
    } else {
        T::max_value().unwrap()
    }
}

fn weighted_lines<T: Real>(
    frame: &MeasurementFrame<T>,
    bs: &BsState<T>,
    ue_orientation: &EulerAngles<T>,
    clock_bias: T,
    weighting: PathWeighting,
) -> Vec<PathLine<T>> {
    frame
        .paths
        .iter()
        .map(|m| build_weighted_line(m, bs, ue_orientation, clock_bias, weighting.weight(m)))
        .collect()
}

/// Closed-form weighted least squares over all path lines, clock bias known.
pub fn locate_multipath_rtt<T: Real>(
    frame: &MeasurementFrame<T>,
    bs: &BsState<T>,
    ue_orientation: &EulerAngles<T>,
    clock_bias: T,
    weighting: PathWeighting,
) -> Result<PositionFix<T>> {
    if frame.paths.is_empty() {
        return Err(Error::NoPaths);
    }
    let lines = weighted_lines(frame, bs, ue_orientation, clock_bias, weighting);
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for l in &lines {
        let wp = l.projector() * l.weight;
        a += wp;
        b += wp * l.mu;
    }
    let ad = DMatrix::from_column_slice(3, 3, a.as_slice());
    if !(condition_number(&ad) < lit(MAX_CONDITION)) {
        return Err(Error::InsufficientPathDiversity);
    }
    let p = a
        .lu()
        .solve(&b)
        .ok_or(Error::InsufficientPathDiversity)?;
    let cost = lines
        .iter()
        .fold(T::zero(), |acc, l| acc + l.weight * l.distance_sq(&p));
    Ok(PositionFix::closed_form(
        p,
        SolverMode::MultipathRtt,
        cost,
        lines.len(),
    ))
}

/// Joint closed-form solve for position and clock bias.
///
/// The bias enters each line as `μ = μ̃ + b·c·u_UE` with `μ̃` built from the
/// raw delay, so it is solved as the range offset `β = b·c` (meters), which
/// keeps the 4×4 normal matrix well scaled; `b = β/c` is reported.
pub fn locate_multipath_tdoa<T: Real>(
    frame: &MeasurementFrame<T>,
    bs: &BsState<T>,
    ue_orientation: &EulerAngles<T>,
    weighting: PathWeighting,
) -> Result<PositionFix<T>> {
    if frame.paths.len() < 2 {
        return Err(Error::UnobservableBiasPosition);
    }
    let lines = weighted_lines(frame, bs, ue_orientation, T::zero(), weighting);
    let mut a = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for l in &lines {
        let p = l.projector();
        let mut j = nalgebra::Matrix3x4::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        j.set_column(3, &(-l.u_ue));
        let jt_p = j.transpose() * p * l.weight;
        a += jt_p * j;
        rhs += jt_p * l.mu;
    }
    let ad = DMatrix::from_column_slice(4, 4, a.as_slice());
    if !(condition_number(&ad) < lit(MAX_CONDITION)) {
        return Err(Error::UnobservableBiasPosition);
    }
    let x = a.lu().solve(&rhs).ok_or(Error::UnobservableBiasPosition)?;
    let p = Vector3::new(x[0], x[1], x[2]);
    let beta = x[3];
    let cost = lines.iter().fold(T::zero(), |acc, l| {
        let r = l.projector() * (p - l.mu - l.u_ue * beta);
        acc + l.weight * r.norm_squared()
    });
    Ok(PositionFix {
        position: p,
        clock_bias: Some(beta / speed_of_light::<T>()),
        mode: SolverMode::MultipathTdoa,
        residual_cost: cost,
        n_paths_used: lines.len(),
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angles_to_unit_vector, IncidencePoint, MeasurementVector};
    use crate::sim::{generate_paths, Surface};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meas(z: MeasurementVector<f64>) -> PathMeasurement<f64> {
        PathMeasurement::with_std(z, 1.0, [1e-10, 1e-3, 1e-3, 1e-3, 1e-3])
    }

    fn aod_only(toa: f64, az: f64, el: f64) -> PathMeasurement<f64> {
        meas(MeasurementVector { toa, aoa_az: 0.0, aoa_el: 0.0, aod_az: az, aod_el: el })
    }

    fn c() -> f64 {
        crate::geometry::SPEED_OF_LIGHT
    }

    #[test]
    fn rtt_aod_examples() {
        let bs = BsState::new(Vector3::new(0.0, 0.0, 30.0), EulerAngles::zero());
        let f = locate_rtt_aod(&aod_only(30.0 / c(), 0.0, -std::f64::consts::FRAC_PI_2), &bs).unwrap();
        assert!(f.position.norm() < 1e-9);
        let bs = BsState::new(Vector3::zeros(), EulerAngles::zero());
        let f = locate_rtt_aod(&aod_only(50.0 / c(), 0.0, 0.0), &bs).unwrap();
        assert!((f.position - Vector3::new(50.0, 0.0, 0.0)).norm() < 1e-9);
        assert!(matches!(locate_rtt_aod(&aod_only(0.0, 0.0, 0.0), &bs), Err(Error::InvalidRange)));
        assert!(matches!(locate_rtt_aod(&aod_only(-1e-7, 0.0, 0.0), &bs), Err(Error::InvalidRange)));
    }

    #[test]
    fn aod_height_examples() {
        let bs = BsState::new(Vector3::new(0.0, 0.0, 21.0), EulerAngles::zero());
        let f = locate_aod_height(&aod_only(1e-7, 0.0, -std::f64::consts::FRAC_PI_4), &bs, 1.0).unwrap();
        assert!((f.position.xy() - nalgebra::Vector2::new(20.0, 0.0)).norm() < 1e-9);
        let f = locate_aod_height(&aod_only(1e-7, 0.0, -std::f64::consts::FRAC_PI_2), &bs, 0.0).unwrap();
        assert!(f.position.xy().norm() < 1e-9);
        assert!(matches!(
            locate_aod_height(&aod_only(1e-7, 0.3, 0.0), &bs, 0.0),
            Err(Error::GrazingRay)
        ));
    }

    fn random_bs(rng: &mut ChaCha8Rng) -> BsState<f64> {
        BsState::new(
            Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(10.0..30.0)),
            EulerAngles::new(rng.random_range(-0.3..0.3), rng.random_range(-0.5..0.5), rng.random_range(-3.1..3.1)),
        )
    }

    fn random_ue(rng: &mut ChaCha8Rng) -> UeState<f64> {
        UeState::new(
            Vector3::new(rng.random_range(-120.0..120.0), rng.random_range(-120.0..120.0), rng.random_range(0.0..2.0)),
            EulerAngles::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-3.1..3.1)),
            0.0,
        )
    }

    #[test]
    fn los_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let bs = random_bs(&mut rng);
            let ue = random_ue(&mut rng);
            let z = measurement_function(&ue, &bs, None).unwrap();
            let m = meas(z);
            let a = locate_rtt_aod(&m, &bs).unwrap();
            assert!((a.position - ue.position).norm() < 1e-9);
            let h = locate_aod_height(&m, &bs, ue.position.z).unwrap();
            assert!((h.position - ue.position).norm() < 1e-9);
            let l = locate_los_ls(&m, &bs, &ue.orientation, 0.0).unwrap();
            assert!((l.position - ue.position).norm() < 1e-6);
            assert!(l.residual_cost < 1e-12);
        }
    }

    #[test]
    fn los_ls_recovers_from_biased_delay() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let bs = random_bs(&mut rng);
        let mut ue = random_ue(&mut rng);
        ue.clock_bias = 40e-9;
        let m = meas(measurement_function(&ue, &bs, None).unwrap());
        let f = locate_los_ls(&m, &bs, &ue.orientation, 40e-9).unwrap();
        assert!((f.position - ue.position).norm() < 1e-6);
        // a wrong delay with exact angles is pulled back mostly by the angle terms
        let mut noisy = m.clone();
        noisy.z.toa += 1.0 / c();
        let f = locate_los_ls(&noisy, &bs, &ue.orientation, 40e-9).unwrap();
        assert!(f.residual_cost > 0.0);
        assert!(f.converged);
    }

    #[test]
    fn no_elevation_fit_stays_near_lattice_minimum() {
        // oracle: minimize the whitened cost over a lattice around the fix
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..3 {
            let bs = random_bs(&mut rng);
            let ue = random_ue(&mut rng);
            let mut z = measurement_function(&ue, &bs, None).unwrap();
            z.aod_az += 0.01;
            z.aoa_az -= 0.02;
            z.aoa_el = 0.0;
            let m = PathMeasurement::with_std(z, 1.0, [1e-9, 0.02, 1.0, 0.01, 0.01]);
            let fix = locate_rtt_aod_aoa(&m, &bs, &ue.orientation, 0.0).unwrap();
            let inflated = m.with_aoa_el_variance(UNINFORMATIVE_ELEVATION_VARIANCE);
            let cost = |p: Vector3<f64>| {
                let u = UeState::new(p, ue.orientation, 0.0);
                let r = measurement_function(&u, &bs, None).unwrap().residual(&z);
                (r.transpose() * inflated.covariance.try_inverse().unwrap() * r)[0]
            };
            let step = 0.05;
            let mut best = (f64::INFINITY, fix.position);
            for i in -20..=20 {
                for j in -20..=20 {
                    for k in -20..=20 {
                        let p = fix.position + Vector3::new(i as f64, j as f64, k as f64) * step;
                        let v = cost(p);
                        if v < best.0 {
                            best = (v, p);
                        }
                    }
                }
            }
            assert!(fix.residual_cost <= best.0 + 1e-9);
            assert!((best.1 - fix.position).norm() <= step * 3f64.sqrt());
        }
    }

    #[test]
    fn path_line_examples() {
        let bs = BsState::new(Vector3::new(0.0, 0.0, 20.0), EulerAngles::new(0.0, 0.1, 0.4));
        let ue = UeState::new(Vector3::new(60.0, 30.0, 1.0), EulerAngles::new(0.0, 0.0, 2.0), 0.0);
        let los = meas(measurement_function(&ue, &bs, None).unwrap());
        let l = build_path_line(&los, &bs, &ue.orientation, 0.0);
        assert!(l.degenerate);
        assert!((l.mu - ue.position).norm() < 1e-9);

        let ip = IncidencePoint::new(Vector3::new(40.0, 70.0, 6.0));
        let nlos = meas(measurement_function(&ue, &bs, Some(&ip)).unwrap());
        let l = build_path_line(&nlos, &bs, &ue.orientation, 0.0);
        assert!(!l.degenerate);
        assert!(l.distance_sq(&ue.position).sqrt() < 1e-9);

        let shifted = build_path_line(&nlos, &bs, &ue.orientation, 5e-9);
        let expected = l.mu + l.u_ue * (c() * 5e-9);
        assert!((shifted.mu - expected).norm() < 1e-9);
    }

    fn scene(rng: &mut ChaCha8Rng, bias: f64) -> (BsState<f64>, UeState<f64>, MeasurementFrame<f64>) {
        loop {
            let bs = random_bs(rng);
            let mut ue = random_ue(rng);
            ue.clock_bias = bias;
            let walls: Vec<Surface<f64>> = (0..3)
                .map(|_| {
                    let n = angles_to_unit_vector(rng.random_range(-3.1..3.1), rng.random_range(-0.2..0.2));
                    let anchor = (bs.position + ue.position) / 2.0 - n * rng.random_range(20.0..80.0);
                    Surface::new(anchor, n, [1e4, 1e4]).unwrap()
                })
                .collect();
            let paths = generate_paths(&bs, &ue, &walls).unwrap();
            if paths.len() < 3 {
                continue;
            }
            let measured = paths
                .iter()
                .map(|p| PathMeasurement::with_std(p.true_measurement, rng.random_range(0.1..2.0), [1e-9; 5]))
                .collect();
            return (bs, ue, MeasurementFrame::new(0, 0.0, measured));
        }
    }

    #[test]
    fn multipath_solvers_are_exact_on_noiseless_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..50 {
            let (bs, ue, frame) = scene(&mut rng, 100e-9);
            let f = locate_multipath_rtt(&frame, &bs, &ue.orientation, 100e-9, PathWeighting::Strength).unwrap();
            assert!((f.position - ue.position).norm() < 1e-6);
            let t = locate_multipath_tdoa(&frame, &bs, &ue.orientation, PathWeighting::Strength).unwrap();
            assert!((t.position - ue.position).norm() < 1e-6);
            assert!((t.clock_bias.unwrap() - 100e-9).abs() < 1e-12);
        }
    }

    #[test]
    fn single_los_falls_back_to_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let bs = random_bs(&mut rng);
        let ue = random_ue(&mut rng);
        let m = meas(measurement_function(&ue, &bs, None).unwrap());
        let frame = MeasurementFrame::new(0, 0.0, vec![m.clone()]);
        let f = locate_multipath_rtt(&frame, &bs, &ue.orientation, 0.0, PathWeighting::Strength).unwrap();
        let r = locate_rtt_aod(&m, &bs).unwrap();
        assert!((f.position - r.position).norm() < 1e-9);
    }

    #[test]
    fn nearly_parallel_arrivals_are_unobservable() {
        let bs = BsState::new(Vector3::new(0.0, 0.0, 20.0), EulerAngles::zero());
        let ue = UeState::new(Vector3::new(80.0, 0.0, 1.0), EulerAngles::zero(), 0.0);
        let los = measurement_function(&ue, &bs, None).unwrap();
        // NLOS that arrives from almost the LOS direction but leaves the BS elsewhere
        let mut nlos = los;
        nlos.aoa_az += 1e-6;
        nlos.aod_az += 0.3;
        nlos.toa += 50e-9;
        let frame = MeasurementFrame::new(0, 0.0, vec![meas(los), meas(nlos)]);
        let r = locate_multipath_tdoa(&frame, &bs, &ue.orientation, PathWeighting::Uniform);
        assert!(matches!(r, Err(Error::UnobservableBiasPosition)));
        let single = MeasurementFrame::new(0, 0.0, vec![meas(los)]);
        assert!(matches!(
            locate_multipath_tdoa(&single, &bs, &ue.orientation, PathWeighting::Uniform),
            Err(Error::UnobservableBiasPosition)
        ));
    }

    #[test]
    fn parallel_lines_lack_diversity() {
        let bs = BsState::new(Vector3::new(0.0, 0.0, 20.0), EulerAngles::zero());
        let z = MeasurementVector { toa: 3e-7, aoa_az: 2.0, aoa_el: 0.1, aod_az: 0.4, aod_el: -0.1 };
        let frame = MeasurementFrame::new(0, 0.0, vec![meas(z), meas(MeasurementVector { toa: 3.2e-7, ..z })]);
        let r = locate_multipath_rtt(&frame, &bs, &EulerAngles::zero(), 0.0, PathWeighting::Uniform);
        assert!(matches!(r, Err(Error::InsufficientPathDiversity)));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in SolverMode::ALL {
            assert_eq!(m.to_string().parse::<SolverMode>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), m.as_str());
        }
        assert!("rtt".parse::<SolverMode>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn weight_scaling_invariance(seed in 0u64..1000, scale in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (bs, ue, frame) = scene(&mut rng, 20e-9);
            let mut noisy = frame.clone();
            for p in &mut noisy.paths {
                p.z.toa += rng.random_range(-1e-9..1e-9);
                p.z.aod_az += rng.random_range(-0.01..0.01);
            }
            let mut scaled = noisy.clone();
            for p in &mut scaled.paths {
                p.strength *= scale;
            }
            let a = locate_multipath_rtt(&noisy, &bs, &ue.orientation, 20e-9, PathWeighting::Strength).unwrap();
            let b = locate_multipath_rtt(&scaled, &bs, &ue.orientation, 20e-9, PathWeighting::Strength).unwrap();
            proptest::prop_assert!((a.position - b.position).norm() < 1e-10 * (1.0 + a.position.norm()));
            let a = locate_multipath_tdoa(&noisy, &bs, &ue.orientation, PathWeighting::Strength).unwrap();
            let b = locate_multipath_tdoa(&scaled, &bs, &ue.orientation, PathWeighting::Strength).unwrap();
            proptest::prop_assert!((a.position - b.position).norm() < 1e-10 * (1.0 + a.position.norm()));
            let db = (a.clock_bias.unwrap() - b.clock_bias.unwrap()) * c();
            proptest::prop_assert!(db.abs() < 1e-10 * (1.0 + a.position.norm()));
        }

        #[test]
        fn bias_shift_moves_only_bias(seed in 0u64..1000, shift in -200e-9f64..200e-9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (bs, ue, frame) = scene(&mut rng, 0.0);
            let mut shifted = frame.clone();
            for p in &mut shifted.paths {
                p.z.toa += shift;
            }
            let a = locate_multipath_tdoa(&frame, &bs, &ue.orientation, PathWeighting::Strength).unwrap();
            let b = locate_multipath_tdoa(&shifted, &bs, &ue.orientation, PathWeighting::Strength).unwrap();
            proptest::prop_assert!((a.position - b.position).norm() < 1e-6);
            proptest::prop_assert!((b.clock_bias.unwrap() - a.clock_bias.unwrap() - shift).abs() < 1e-15);
        }
    }
}
