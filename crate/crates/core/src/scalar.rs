//! Scalar abstraction shared by every numeric module.
//!
//! All geometry, estimation and solver code is written against [`Real`]
//! so the same routines run in `f32` or `f64`. Simulation draws its random
//! numbers in `f64` and converts.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Serialize + DeserializeOwned + Send + Sync
{
}

impl<T> Real for T where
    T: RealField + Copy + FromPrimitive + ToPrimitive + Serialize + DeserializeOwned + Send + Sync
{
}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[inline]
pub fn deg<T: Real>(degrees: f64) -> T {
    lit(degrees.to_radians())
}
