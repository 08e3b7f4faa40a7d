//! Shared value types: planar site coordinates, the 10-minute time grid,
//! wind samples and the square-root transform used throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in km, used by the equirectangular projection.
const EARTH_RADIUS_KM: f64 = 6371.0;

/// A site position in a planar projection, in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoLocation {
    pub x: f64,
    pub y: f64,
}

impl GeoLocation {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::domain(format!("non-finite coordinates ({x}, {y})")));
        }
        Ok(Self { x, y })
    }

    pub fn distance_to(&self, other: &GeoLocation) -> f64 {
        euclidean_distance(self, other)
    }
}

/// Euclidean distance between two planar locations, in km.
pub fn euclidean_distance(a: &GeoLocation, b: &GeoLocation) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Equirectangular projection about a reference point.
///
/// Adequate at national scale (a few hundred km), where the distortion of
/// east-west distances away from the reference latitude stays small.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub ref_lat: f64,
    pub ref_lon: f64,
}

impl Projection {
    pub fn project(&self, lon: f64, lat: f64) -> Result<GeoLocation> {
        let x = EARTH_RADIUS_KM * (lon - self.ref_lon).to_radians() * self.ref_lat.to_radians().cos();
        let y = EARTH_RADIUS_KM * (lat - self.ref_lat).to_radians();
        GeoLocation::new(x, y)
    }
}

/// Minutes since the Unix epoch (UTC), restricted to the 10-minute grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeStamp(i64);

impl TimeStamp {
    pub const STEP_MINUTES: i64 = 10;

    pub fn new(epoch_minutes: i64) -> Result<Self> {
        if epoch_minutes.rem_euclid(Self::STEP_MINUTES) != 0 {
            return Err(Error::domain(format!("timestamp {epoch_minutes} min is not on the 10-minute grid")));
        }
        Ok(Self(epoch_minutes))
    }

    /// Rounds down onto the grid.
    pub fn floor(epoch_minutes: i64) -> Self {
        Self(epoch_minutes - epoch_minutes.rem_euclid(Self::STEP_MINUTES))
    }

    pub fn epoch_minutes(&self) -> i64 {
        self.0
    }

    /// Fractional hour of day in [0, 24).
    pub fn hour_of_day(&self) -> f64 {
        self.0.rem_euclid(24 * 60) as f64 / 60.0
    }

    pub fn offset_steps(&self, steps: i64) -> Self {
        Self(self.0 + steps * Self::STEP_MINUTES)
    }
}

/// One 10 m wind observation. `direction` is where the wind blows from,
/// in degrees clockwise from north.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindSample {
    pub speed: f64,
    pub direction: f64,
}

impl WindSample {
    pub fn new(speed: f64, direction: f64) -> Result<Self> {
        if !(speed >= 0.0) || !speed.is_finite() {
            return Err(Error::domain(format!("wind speed must be finite and >= 0, got {speed}")));
        }
        if !direction.is_finite() {
            return Err(Error::domain("wind direction must be finite"));
        }
        Ok(Self { speed, direction: direction.rem_euclid(360.0) })
    }

    pub fn components(&self) -> (f64, f64) {
        direction_components(self.direction)
    }
}

/// Height above ground in metres.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct HeightLevel(f64);

impl HeightLevel {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::domain(format!("height must be positive, got {h}")));
        }
        Ok(Self(h))
    }

    pub fn meters(&self) -> f64 {
        self.0
    }
}

/// Unit flow vector `(U, V)` for a FROM-direction: a northerly (0°) blows
/// towards the south, giving `(0, -1)`.
pub fn direction_components(direction_deg: f64) -> (f64, f64) {
    let theta = direction_deg.to_radians();
    (-theta.sin(), -theta.cos())
}

pub fn sqrt_transform(speed: f64) -> Result<f64> {
    if speed < 0.0 || speed.is_nan() {
        return Err(Error::domain(format!("cannot take square root of speed {speed}")));
    }
    Ok(speed.sqrt())
}

/// Inverse of [`sqrt_transform`]; negative inputs clamp to zero.
pub fn square_back(x: f64) -> f64 {
    let x = x.max(0.0);
    x * x
}
