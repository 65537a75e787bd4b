//! Measurement records exchanged between the simulator, the channel estimator
//! and the solvers.

use nalgebra::{Matrix5, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{IncidencePoint, MeasurementVector, UeState};
use crate::scalar::Real;

/// Variance assigned to the AOA elevation when the receive array cannot
/// resolve it.
pub const UNINFORMATIVE_ELEVATION_VARIANCE: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Los,
    Nlos,
}

/// Estimated (or simulated) channel parameters of one propagation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PathMeasurement<T> {
    pub z: MeasurementVector<T>,
    /// Path strength, used as the path weight by the multipath solvers.
    pub strength: T,
    /// 5×5 covariance in `[τ, θ_az, θ_el, φ_az, φ_el]` order, serialized by rows.
    #[serde(with = "matrix5_rows")]
    pub covariance: Matrix5<T>,
}

impl<T: Real> PathMeasurement<T> {
    pub fn new(z: MeasurementVector<T>, strength: T, covariance: Matrix5<T>) -> Self {
        Self {
            z,
            strength,
            covariance,
        }
    }

    /// Measurement with a diagonal covariance built from standard deviations.
    pub fn with_std(z: MeasurementVector<T>, strength: T, std: [T; 5]) -> Self {
        let cov = Matrix5::from_diagonal(&nalgebra::Vector5::from_iterator(
            std.iter().map(|s| *s * *s),
        ));
        Self::new(z, strength, cov)
    }

    /// Copy with the AOA-elevation variance replaced (cross terms cleared).
    pub fn with_aoa_el_variance(&self, variance: T) -> Self {
        let mut out = self.clone();
        for k in 0..5 {
            out.covariance[(2, k)] = T::zero();
            out.covariance[(k, 2)] = T::zero();
        }
        out.covariance[(2, 2)] = variance;
        out
    }
}

/// Ground truth of one simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PathTruth<T> {
    pub kind: PathKind,
    pub ip: Option<IncidencePoint<T>>,
    pub measurement: MeasurementVector<T>,
    /// Index of the surface that produced an NLOS path.
    pub surface: Option<usize>,
}

/// Ground truth attached to a frame for test oracles and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FrameTruth<T> {
    /// UE state, `clock_bias` holding the bias actually applied to the frame.
    pub ue: UeState<T>,
    pub paths: Vec<PathTruth<T>>,
    /// `association[i]` is the truth path measured by `paths[i]` of the frame.
    pub association: Vec<Option<usize>>,
}

impl<T: Real> FrameTruth<T> {
    pub fn los_measurement_index(&self) -> Option<usize> {
        self.association.iter().position(|a| {
            a.map(|t| self.paths[t].kind == PathKind::Los)
                .unwrap_or(false)
        })
    }

    pub fn ue_position(&self) -> Vector3<T> {
        self.ue.position
    }
}

/// All path measurements of one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MeasurementFrame<T> {
    pub index: usize,
    /// Seconds since the start of the run; alignment key for evaluation.
    pub timestamp: T,
    pub paths: Vec<PathMeasurement<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<FrameTruth<T>>,
}

impl<T: Real> MeasurementFrame<T> {
    pub fn new(index: usize, timestamp: T, paths: Vec<PathMeasurement<T>>) -> Self {
        Self {
            index,
            timestamp,
            paths,
            truth: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

pub(crate) mod matrix5_rows {
    use nalgebra::Matrix5;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Real;

    pub fn serialize<S: Serializer, T: Real>(m: &Matrix5<T>, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[T; 5]; 5] = std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Real>(d: D) -> Result<Matrix5<T>, D::Error> {
        let rows = <[[T; 5]; 5]>::deserialize(d)?;
        Ok(Matrix5::from_fn(|i, j| rows[i][j]))
    }
}

pub(crate) mod matrix4_rows {
    use nalgebra::Matrix4;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Real;

    pub fn serialize<S: Serializer, T: Real>(m: &Matrix4<T>, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[T; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Real>(d: D) -> Result<Matrix4<T>, D::Error> {
        let rows = <[[T; 4]; 4]>::deserialize(d)?;
        Ok(Matrix4::from_fn(|i, j| rows[i][j]))
    }
}
