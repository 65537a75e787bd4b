//! BS pose calibration from LOS angles observed at known UE poses.

use nalgebra::{DMatrix, DVector, Matrix4, Matrix4x6, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{measurement_function, wrap_angle, BsState, EulerAngles, UeState};
use crate::lm::{minimize, numeric_jacobian, Bounds, LmOptions};
use crate::measurement::{matrix4_rows, MeasurementFrame};
use crate::scalar::{deg, lit, Real};

/// Per-axis standard deviations of a UE pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PoseUncertainty<T> {
    pub position_std: [T; 3],
    /// Roll, pitch, yaw standard deviations in radians.
    pub orientation_std: [T; 3],
}

impl<T: Real> Default for PoseUncertainty<T> {
    /// Figures of a GNSS/INS reference unit.
    fn default() -> Self {
        Self {
            position_std: [lit(0.194), lit(0.187), lit(0.245)],
            orientation_std: [deg(0.060), deg(0.052), deg(1.136)],
        }
    }
}

/// LOS angles `[θ_az, θ_el, φ_az, φ_el]` seen from a known UE pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CalibrationSample<T> {
    pub ue: UeState<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_uncertainty: Option<PoseUncertainty<T>>,
    pub angles: [T; 4],
    #[serde(with = "matrix4_rows")]
    pub covariance: Matrix4<T>,
}

/// Search box around a nominal BS pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PriorBox<T> {
    pub center: BsState<T>,
    pub position_halfwidth: [T; 3],
    /// Roll, pitch, yaw half-widths in radians.
    pub orientation_halfwidth: [T; 3],
}

impl<T: Real> PriorBox<T> {
    /// 5 m per axis and 10° per angle around `center`.
    pub fn around(center: BsState<T>) -> Self {
        Self {
            center,
            position_halfwidth: [lit(5.0); 3],
            orientation_halfwidth: [deg(10.0); 3],
        }
    }

    fn bounds(&self) -> Bounds<T> {
        let c = self.center.to_params();
        let hw = [
            self.position_halfwidth[0],
            self.position_halfwidth[1],
            self.position_halfwidth[2],
            self.orientation_halfwidth[0],
            self.orientation_halfwidth[1],
            self.orientation_halfwidth[2],
        ];
        Bounds {
            lower: DVector::from_fn(6, |i, _| c[i] - hw[i]),
            upper: DVector::from_fn(6, |i, _| c[i] + hw[i]),
        }
    }

    pub fn contains(&self, bs: &BsState<T>) -> bool {
        let tol = lit::<T>(1e-12);
        let b = self.bounds();
        bs.to_params()
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= b.lower[i] - tol && *v <= b.upper[i] + tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CalibrationResult<T> {
    pub bs: BsState<T>,
    pub final_cost: T,
    pub initial_cost: T,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions<T> {
    pub lm: LmOptions<T>,
    /// Fold each sample's pose uncertainty into its angle covariance.
    pub inflate_pose_uncertainty: bool,
}

impl<T: Real> Default for CalibrationOptions<T> {
    fn default() -> Self {
        Self {
            lm: LmOptions::default(),
            inflate_pose_uncertainty: true,
        }
    }
}

/// Index of the earliest path; paths within `tie_window` seconds of the
/// earliest are decided by strength, then by lowest index.
pub fn select_los<T: Real>(frame: &MeasurementFrame<T>, tie_window: T) -> Result<usize> {
    let first = frame
        .paths
        .iter()
        .map(|p| p.z.toa)
        .fold(None, |m: Option<T>, t| Some(m.map_or(t, |m| m.min(t))))
        .ok_or(Error::NoPaths)?;
    let mut best: Option<usize> = None;
    for (i, p) in frame.paths.iter().enumerate() {
        if p.z.toa - first >= tie_window && p.z.toa != first {
            continue;
        }
        match best {
            Some(b) if frame.paths[b].strength >= p.strength => {}
            _ => best = Some(i),
        }
    }
    best.ok_or(Error::NoPaths)
}

/// Default LOS tie window, seconds.
pub const DEFAULT_TIE_WINDOW_S: f64 = 1e-9;

/// Builds one sample per frame from its LOS path and the matching UE pose.
pub fn samples_from_frames<T: Real>(
    frames: &[MeasurementFrame<T>],
    ues: &[UeState<T>],
    tie_window: T,
    pose_uncertainty: Option<PoseUncertainty<T>>,
) -> Result<Vec<CalibrationSample<T>>> {
    if frames.len() != ues.len() {
        return Err(Error::Config(format!(
            "{} frames but {} UE poses",
            frames.len(),
            ues.len()
        )));
    }
    frames
        .iter()
        .zip(ues)
        .map(|(f, ue)| {
            let p = &f.paths[select_los(f, tie_window)?];
            let v = p.z.to_vector();
            Ok(CalibrationSample {
                ue: *ue,
                pose_uncertainty,
                angles: [v[1], v[2], v[3], v[4]],
                covariance: p.covariance.fixed_view::<4, 4>(1, 1).into_owned(),
            })
        })
        .collect()
}

fn predicted_angles<T: Real>(ue: &UeState<T>, bs: &BsState<T>) -> Option<Vector4<T>> {
    let h = measurement_function(ue, bs, None).ok()?;
    Some(Vector4::new(h.aoa_az, h.aoa_el, h.aod_az, h.aod_el))
}

fn angle_residual<T: Real>(h: &Vector4<T>, z: &[T; 4]) -> Vector4<T> {
    Vector4::new(
        wrap_angle(h[0] - z[0]),
        h[1] - z[1],
        wrap_angle(h[2] - z[2]),
        h[3] - z[3],
    )
}

/// First-order covariance of the predicted angles due to UE pose error.
fn pose_induced_covariance<T: Real>(
    sample: &CalibrationSample<T>,
    bs: &BsState<T>,
    unc: &PoseUncertainty<T>,
) -> Matrix4<T> {
    let base = sample.ue;
    let f = |x: &DVector<T>| {
        let ue = UeState {
            position: base.position + nalgebra::Vector3::new(x[0], x[1], x[2]),
            orientation: EulerAngles::new(
                base.orientation.roll + x[3],
                base.orientation.pitch + x[4],
                base.orientation.yaw + x[5],
            ),
            ..base
        };
        let h = predicted_angles(&ue, bs).unwrap_or_else(Vector4::zeros);
        let h0 = predicted_angles(&base, bs).unwrap_or_else(Vector4::zeros);
        let r = angle_residual(&h, &[h0[0], h0[1], h0[2], h0[3]]);
        DVector::from_column_slice(r.as_slice())
    };
    let j = numeric_jacobian(&f, &DVector::zeros(6), lit(1e-7));
    let j = Matrix4x6::from_fn(|r, c| j[(r, c)]);
    let std = [
        unc.position_std[0],
        unc.position_std[1],
        unc.position_std[2],
        unc.orientation_std[0],
        unc.orientation_std[1],
        unc.orientation_std[2],
    ];
    let s = nalgebra::Matrix6::from_diagonal(&nalgebra::Vector6::from_fn(|i, _| std[i] * std[i]));
    j * s * j.transpose()
}

fn check_diversity<T: Real>(samples: &[CalibrationSample<T>]) -> Result<()> {
    if samples.len() < 3 {
        return Err(Error::UnderdeterminedCalibration);
    }
    let n = samples.len();
    let mean = samples
        .iter()
        .fold(nalgebra::Vector3::zeros(), |a, s| a + s.ue.position)
        / lit::<T>(n as f64);
    let m = DMatrix::from_fn(n, 3, |i, j| samples[i].ue.position[j] - mean[j]);
    let sv = m.singular_values();
    let mut s: Vec<T> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if !(s[1] > lit::<T>(1e-6) * s[0].max(T::one())) {
        return Err(Error::UnderdeterminedCalibration);
    }
    Ok(())
}

/// Whitened residual stack used by the calibration cost.
struct CalibrationProblem<T: Real> {
    samples: Vec<([T; 4], UeState<T>, Matrix4<T>)>,
}

impl<T: Real> CalibrationProblem<T> {
    fn new(samples: &[CalibrationSample<T>], nominal: &BsState<T>, inflate: bool) -> Result<Self> {
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            let mut cov = s.covariance;
            if inflate {
                if let Some(u) = &s.pose_uncertainty {
                    cov += pose_induced_covariance(s, nominal, u);
                }
            }
            let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
            let whitener = chol.l().try_inverse().ok_or(Error::SingularCovariance)?;
            out.push((s.angles, s.ue, whitener));
        }
        Ok(Self { samples: out })
    }

    fn residual(&self, x: &DVector<T>) -> DVector<T> {
        let bs = BsState::from_params(x.as_slice());
        let mut r = DVector::zeros(4 * self.samples.len());
        for (k, (z, ue, w)) in self.samples.iter().enumerate() {
            let e = match predicted_angles(ue, &bs) {
                Some(h) => w * angle_residual(&h, z),
                None => Vector4::repeat(lit(1e6)),
            };
            r.fixed_rows_mut::<4>(4 * k).copy_from(&e);
        }
        r
    }

    fn cost(&self, bs: &BsState<T>) -> T {
        self.residual(&DVector::from_column_slice(&bs.to_params()))
            .norm_squared()
    }
}

/// Calibration cost `Σ (h − z)ᵀ Ř⁻¹ (h − z)` of a candidate pose.
pub fn calibration_cost<T: Real>(
    samples: &[CalibrationSample<T>],
    bs: &BsState<T>,
    inflate_pose_uncertainty: bool,
) -> Result<T> {
    Ok(CalibrationProblem::new(samples, bs, inflate_pose_uncertainty)?.cost(bs))
}

/// Box-constrained least-squares fit of the BS pose starting at the box centre.
pub fn calibrate_bs<T: Real>(
    samples: &[CalibrationSample<T>],
    prior: &PriorBox<T>,
    options: &CalibrationOptions<T>,
) -> Result<CalibrationResult<T>> {
    check_diversity(samples)?;
    let problem = CalibrationProblem::new(samples, &prior.center, options.inflate_pose_uncertainty)?;
    let x0 = DVector::from_column_slice(&prior.center.to_params());
    let bounds = prior.bounds();
    let report = minimize(|x| problem.residual(x), &x0, Some(&bounds), &options.lm);
    Ok(CalibrationResult {
        bs: BsState::from_params(report.params.as_slice()),
        final_cost: report.cost,
        initial_cost: report.initial_cost,
        iterations: report.iterations,
        converged: report.converged,
    })
}
