//! Incidence-point estimation for NLOS paths given a UE fix.

use nalgebra::{DVector, Matrix3, Matrix5, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    arrival_direction, measurement_function, BsState, EulerAngles, IncidencePoint,
    MeasurementVector, UeState,
};
use crate::lm::{minimize, LmOptions};
use crate::measurement::PathMeasurement;
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSource {
    pub frame: usize,
    pub path: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IPEstimate<T> {
    pub position: Vector3<T>,
    pub residual_cost: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathSource>,
    /// Set when most sigma-point solves failed; `position` is then the init.
    #[serde(default)]
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MappingOptions<T> {
    pub lm: LmOptions<T>,
    /// Unscented spread parameter λ; the sigma spread is `√((n + λ)·R)`.
    pub spread: T,
}

const MEASUREMENT_DIM: usize = 5;

impl<T: Real> Default for MappingOptions<T> {
    fn default() -> Self {
        Self {
            lm: LmOptions::default(),
            spread: lit(3.0 - MEASUREMENT_DIM as f64),
        }
    }
}

/// Least-squares intersection of the BS departure ray and the UE arrival
/// ray. The delay is not used.
pub fn init_ip<T: Real>(
    meas: &PathMeasurement<T>,
    bs: &BsState<T>,
    ue_fix: &Vector3<T>,
    ue_orientation: &EulerAngles<T>,
) -> Result<Vector3<T>> {
    let u_bs = bs.departure_direction(meas.z.aod_az, meas.z.aod_el);
    let u_ue = arrival_direction(ue_orientation, meas.z.aoa_az, meas.z.aoa_el);
    closest_point_to_rays(&bs.position, &u_bs, ue_fix, &u_ue)
}

/// Point minimizing the summed squared distance to two lines.
pub fn closest_point_to_rays<T: Real>(
    a: &Vector3<T>,
    u: &Vector3<T>,
    b: &Vector3<T>,
    v: &Vector3<T>,
) -> Result<Vector3<T>> {
    let u = u.normalize();
    let v = v.normalize();
    if !(u.cross(&v).norm() > lit(1e-6)) {
        return Err(Error::DegenerateRayPair);
    }
    let pu = Matrix3::identity() - u * u.transpose();
    let pv = Matrix3::identity() - v * v.transpose();
    (pu + pv)
        .lu()
        .solve(&(pu * a + pv * b))
        .ok_or(Error::DegenerateRayPair)
}

fn whitener<T: Real>(cov: &Matrix5<T>) -> Result<Matrix5<T>> {
    let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
    chol.l().try_inverse().ok_or(Error::SingularCovariance)
}

/// Symmetric square root of a PSD matrix; negative eigenvalues clamp to zero.
fn psd_sqrt<T: Real>(m: &Matrix5<T>) -> Matrix5<T> {
    let eig = m.symmetric_eigen();
    let d = Matrix5::from_diagonal(&eig.eigenvalues.map(|v| v.max(T::zero()).sqrt()));
    eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `2n + 1` sigma points `z`, `z ± col_i(√((n + λ)R))`.
pub fn sigma_points<T: Real>(z: &Vector5<T>, covariance: &Matrix5<T>, spread: T) -> Vec<Vector5<T>> {
    let scale = lit::<T>(MEASUREMENT_DIM as f64) + spread;
    let s = psd_sqrt(&(covariance * scale.max(T::zero())));
    let mut out = vec![*z];
    for i in 0..MEASUREMENT_DIM {
        out.push(z + s.column(i));
        out.push(z - s.column(i));
    }
    out
}

/// Whitened measurement cost of an incidence point.
pub fn ip_cost<T: Real>(
    meas: &PathMeasurement<T>,
    bs: &BsState<T>,
    ue: &UeState<T>,
    ip: &Vector3<T>,
) -> Result<T> {
    let w = whitener(&meas.covariance)?;
    Ok(residual(&w, &meas.z, bs, ue, ip).norm_squared())
}

fn residual<T: Real>(
    w: &Matrix5<T>,
    z: &MeasurementVector<T>,
    bs: &BsState<T>,
    ue: &UeState<T>,
    ip: &Vector3<T>,
) -> Vector5<T> {
    match measurement_function(ue, bs, Some(&IncidencePoint::new(*ip))) {
        Ok(h) => w * h.residual(z),
        Err(_) => Vector5::repeat(lit(1e12)),
    }
}

/// Sigma-point least squares: one LM solve from `init` per sigma point of the
/// measurement distribution, averaged without weights.
#[allow(clippy::too_many_arguments)]
pub fn refine_ip<T: Real>(
    meas: &PathMeasurement<T>,
    bs: &BsState<T>,
    ue_fix: &Vector3<T>,
    ue_orientation: &EulerAngles<T>,
    clock_bias: T,
    init: &Vector3<T>,
    options: &MappingOptions<T>,
) -> Result<IPEstimate<T>> {
    let w = whitener(&meas.covariance)?;
    let ue = UeState::new(*ue_fix, *ue_orientation, clock_bias);
    let points = sigma_points(&meas.z.to_vector(), &meas.covariance, options.spread);
    let x0 = DVector::from_column_slice(init.as_slice());
    let mut sum = Vector3::zeros();
    let mut failures = 0;
    for zp in &points {
        let z = MeasurementVector::from_vector(zp);
        let f = |x: &DVector<T>| {
            let r = residual(&w, &z, bs, &ue, &Vector3::new(x[0], x[1], x[2]));
            DVector::from_column_slice(r.as_slice())
        };
        let rep = minimize(f, &x0, None, &options.lm);
        if !rep.converged || !rep.cost.is_finite() {
            failures += 1;
        }
        sum += Vector3::new(rep.params[0], rep.params[1], rep.params[2]);
    }
    let flagged = 2 * failures > points.len();
    let position = if flagged {
        *init
    } else {
        sum / lit::<T>(points.len() as f64)
    };
    Ok(IPEstimate {
        position,
        residual_cost: residual(&w, &meas.z, bs, &ue, &position).norm_squared(),
        source: None,
        flagged,
    })
}
