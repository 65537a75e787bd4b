//! Coordinate conventions, rotation matrices and the forward measurement model.
//!
//! Everything lives in one local Cartesian ENU frame. A node's orientation is a
//! roll/pitch/yaw triple and its rotation matrix is `Rz(yaw)·Ry(pitch)·Rx(roll)`.
//! That matrix is applied to global difference vectors to obtain the local
//! arrival/departure directions, `q = R·(target − origin)`, and its transpose
//! maps a local unit direction back to the global frame.

use nalgebra::{Matrix3, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[inline]
pub fn speed_of_light<T: Real>() -> T {
    lit(SPEED_OF_LIGHT)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle<T: Real>(angle: T) -> T {
    let pi = T::pi();
    let two_pi = T::two_pi();
    let mut a = angle % two_pi;
    if a > pi {
        a -= two_pi;
    } else if a <= -pi {
        a += two_pi;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EulerAngles<T> {
    pub roll: T,
    pub pitch: T,
    pub yaw: T,
}

impl<T: Real> EulerAngles<T> {
    pub fn new(roll: T, pitch: T, yaw: T) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_degrees(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(
            lit(roll.to_radians()),
            lit(pitch.to_radians()),
            lit(yaw.to_radians()),
        )
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }

    /// Canonical representative of the same rotation: pitch in `[−π/2, π/2]`,
    /// roll and yaw in `(−π, π]`.
    pub fn normalized(&self) -> Self {
        let half_pi = T::frac_pi_2();
        let mut roll = wrap_angle(self.roll);
        let mut pitch = wrap_angle(self.pitch);
        let mut yaw = wrap_angle(self.yaw);
        if pitch > half_pi || pitch < -half_pi {
            // (r, p, y) and (r + π, π − p, y + π) give the same ZYX rotation.
            pitch = wrap_angle(T::pi() - pitch);
            roll = wrap_angle(roll + T::pi());
            yaw = wrap_angle(yaw + T::pi());
        }
        Self { roll, pitch, yaw }
    }

    pub fn rotation(&self) -> Matrix3<T> {
        euler_to_rotation(self)
    }
}

/// Base station pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BsState<T> {
    pub position: Vector3<T>,
    pub orientation: EulerAngles<T>,
}

impl<T: Real> BsState<T> {
    pub fn new(position: Vector3<T>, orientation: EulerAngles<T>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn rotation(&self) -> Matrix3<T> {
        self.orientation.rotation()
    }

    /// Pose packed as `[x, y, z, roll, pitch, yaw]`.
    pub fn to_params(&self) -> [T; 6] {
        let p = &self.position;
        let o = &self.orientation;
        [p.x, p.y, p.z, o.roll, o.pitch, o.yaw]
    }

    pub fn from_params(x: &[T]) -> Self {
        Self::new(
            Vector3::new(x[0], x[1], x[2]),
            EulerAngles::new(x[3], x[4], x[5]),
        )
    }

    /// Global unit vector of a departure direction given in the array frame.
    pub fn departure_direction(&self, azimuth: T, elevation: T) -> Vector3<T> {
        self.rotation().transpose() * angles_to_unit_vector(azimuth, elevation)
    }
}

/// User equipment state at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct UeState<T> {
    pub position: Vector3<T>,
    pub orientation: EulerAngles<T>,
    /// Receiver clock offset, seconds.
    pub clock_bias: T,
}

impl<T: Real> UeState<T> {
    pub fn new(position: Vector3<T>, orientation: EulerAngles<T>, clock_bias: T) -> Self {
        Self {
            position,
            orientation,
            clock_bias,
        }
    }

    pub fn rotation(&self) -> Matrix3<T> {
        self.orientation.rotation()
    }

    /// Global unit vector pointing from the UE towards the arrival direction.
    pub fn arrival_direction(&self, azimuth: T, elevation: T) -> Vector3<T> {
        arrival_direction(&self.orientation, azimuth, elevation)
    }
}

pub fn arrival_direction<T: Real>(
    orientation: &EulerAngles<T>,
    azimuth: T,
    elevation: T,
) -> Vector3<T> {
    orientation.rotation().transpose() * angles_to_unit_vector(azimuth, elevation)
}

/// Point where a non-line-of-sight path meets its reflecting surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct IncidencePoint<T> {
    pub position: Vector3<T>,
}

impl<T: Real> IncidencePoint<T> {
    pub fn new(position: Vector3<T>) -> Self {
        Self { position }
    }
}

/// Per-path channel parameters: delay, angle of arrival and angle of departure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MeasurementVector<T> {
    /// Time of arrival, seconds (includes the clock bias).
    pub toa: T,
    pub aoa_az: T,
    pub aoa_el: T,
    pub aod_az: T,
    pub aod_el: T,
}

impl<T: Real> MeasurementVector<T> {
    /// Stacked as `[τ, θ_az, θ_el, φ_az, φ_el]`.
    pub fn to_vector(&self) -> Vector5<T> {
        Vector5::new(self.toa, self.aoa_az, self.aoa_el, self.aod_az, self.aod_el)
    }

    pub fn from_vector(v: &Vector5<T>) -> Self {
        Self {
            toa: v[0],
            aoa_az: v[1],
            aoa_el: v[2],
            aod_az: v[3],
            aod_el: v[4],
        }
    }

    /// Componentwise `self − other`, with azimuth differences wrapped.
    pub fn residual(&self, other: &Self) -> Vector5<T> {
        Vector5::new(
            self.toa - other.toa,
            wrap_angle(self.aoa_az - other.aoa_az),
            self.aoa_el - other.aoa_el,
            wrap_angle(self.aod_az - other.aod_az),
            self.aod_el - other.aod_el,
        )
    }

    /// Wraps azimuths into `(−π, π]`.
    pub fn normalized(&self) -> Self {
        Self {
            aoa_az: wrap_angle(self.aoa_az),
            aod_az: wrap_angle(self.aod_az),
            ..*self
        }
    }
}

/// `Rz(yaw)·Ry(pitch)·Rx(roll)`.
pub fn euler_to_rotation<T: Real>(angles: &EulerAngles<T>) -> Matrix3<T> {
    let (sr, cr) = angles.roll.sin_cos();
    let (sp, cp) = angles.pitch.sin_cos();
    let (sy, cy) = angles.yaw.sin_cos();
    let (o, l) = (T::zero(), T::one());
    let rz = Matrix3::new(cy, -sy, o, sy, cy, o, o, o, l);
    let ry = Matrix3::new(cp, o, sp, o, l, o, -sp, o, cp);
    let rx = Matrix3::new(l, o, o, o, cr, -sr, o, sr, cr);
    rz * ry * rx
}

/// Inverse of [`euler_to_rotation`]; pitch lands in [−π/2, π/2].
pub fn rotation_to_euler<T: Real>(m: &Matrix3<T>) -> EulerAngles<T> {
    let sp = (-m[(2, 0)]).clamp(-T::one(), T::one());
    let pitch = sp.asin();
    if sp.abs() > lit(1.0 - 1e-12) {
        // gimbal lock: only roll − yaw (or roll + yaw) is observable
        let yaw = T::zero();
        let roll = (m[(0, 1)] * sp).atan2(m[(1, 1)]);
        return EulerAngles::new(roll, pitch, yaw);
    }
    EulerAngles::new(
        m[(2, 1)].atan2(m[(2, 2)]),
        pitch,
        m[(1, 0)].atan2(m[(0, 0)]),
    )
}

/// Azimuth `atan2(q₂, q₁)` and elevation `asin(q₃/‖q‖)`.
///
/// A vector along ±z has no defined azimuth; it is reported as 0.
pub fn direction_to_angles<T: Real>(q: &Vector3<T>) -> Result<(T, T)> {
    let norm = q.norm();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(Error::DegenerateDirection);
    }
    let azimuth = if q.x == T::zero() && q.y == T::zero() {
        T::zero()
    } else {
        wrap_angle(q.y.atan2(q.x))
    };
    let ratio = (q.z / norm).clamp(-T::one(), T::one());
    Ok((azimuth, ratio.asin()))
}

/// Unit vector `[cos az·cos el, sin az·cos el, sin el]`.
pub fn angles_to_unit_vector<T: Real>(azimuth: T, elevation: T) -> Vector3<T> {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    Vector3::new(ca * ce, sa * ce, se)
}

fn min_separation<T: Real>() -> T {
    lit(1e-9)
}

/// Forward model: the noiseless channel parameters of the LOS path
/// (`ip = None`) or of the NLOS path bouncing at `ip`.
pub fn measurement_function<T: Real>(
    ue: &UeState<T>,
    bs: &BsState<T>,
    ip: Option<&IncidencePoint<T>>,
) -> Result<MeasurementVector<T>> {
    let c = speed_of_light::<T>();
    let eps = min_separation::<T>();
    let (distance, aoa_target, aod_target) = match ip {
        None => {
            let d = (bs.position - ue.position).norm();
            if !(d > eps) {
                return Err(Error::DegenerateGeometry);
            }
            (d, bs.position, ue.position)
        }
        Some(ip) => {
            let d_ue = (ip.position - ue.position).norm();
            let d_bs = (ip.position - bs.position).norm();
            if !(d_ue > eps) || !(d_bs > eps) {
                return Err(Error::DegenerateGeometry);
            }
            (d_ue + d_bs, ip.position, ip.position)
        }
    };
    let q_aoa = ue.rotation() * (aoa_target - ue.position);
    let q_aod = bs.rotation() * (aod_target - bs.position);
    let (aoa_az, aoa_el) =
        direction_to_angles(&q_aoa).map_err(|_| Error::DegenerateGeometry)?;
    let (aod_az, aod_el) =
        direction_to_angles(&q_aod).map_err(|_| Error::DegenerateGeometry)?;
    Ok(MeasurementVector {
        toa: distance / c + ue.clock_bias,
        aoa_az,
        aoa_el,
        aod_az,
        aod_el,
    })
}
