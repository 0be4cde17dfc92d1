//! Domain values shared by every part of the engine.
//!
//! All types here are plain immutable values. Constructors that can fail
//! return a [`ValidationError`] naming the violated bound.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fmt;
use thiserror::Error;

/// Free-form, domain-specific event attributes.
pub type Payload = Map<String, Value>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("latitude out of range: {0}")]
    LatitudeOutOfRange(f64),
    #[error("longitude out of range: {0}")]
    LongitudeOutOfRange(f64),
    #[error("non-positive timestamp: {0}")]
    NonPositiveTimestamp(i64),
    #[error("negative speed: {0}")]
    NegativeSpeed(f64),
    #[error("negative accuracy: {0}")]
    NegativeAccuracy(f64),
    #[error("bearing out of range: {0}")]
    BearingOutOfRange(f64),
    #[error("altitude is not finite: {0}")]
    NonFiniteAltitude(f64),
    #[error("zoom level out of range: {0} (expected 0..=17)")]
    ZoomOutOfRange(i64),
    #[error("bounding box min exceeds max on the {0} axis")]
    InvertedBoundingBox(&'static str),
    #[error("time range tmin {tmin} exceeds tmax {tmax}")]
    InvertedTimeRange { tmin: i64, tmax: i64 },
}

/// A WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Builds a point without range checks. Use [`GeoPoint::checked`] for
    /// untrusted input.
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn checked(lat: f64, lon: f64) -> Result<Self, ValidationError> {
        let p = Self { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        // Written as negated containment so NaN is rejected too.
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(ValidationError::LatitudeOutOfRange(self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(ValidationError::LongitudeOutOfRange(self.lon));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// One of the 18 discrete map scales, 0 (whole world) through 17.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct ZoomLevel(u8);

impl ZoomLevel {
    pub const MAX: u8 = 17;
    /// Number of supported levels.
    pub const COUNT: usize = 18;

    pub fn new(z: i64) -> Result<Self, ValidationError> {
        if (0..=Self::MAX as i64).contains(&z) {
            Ok(Self(z as u8))
        } else {
            Err(ValidationError::ZoomOutOfRange(z))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// All levels in ascending order.
    pub fn all() -> impl DoubleEndedIterator<Item = ZoomLevel> + ExactSizeIterator {
        (0..=Self::MAX).map(ZoomLevel)
    }
}

impl TryFrom<i64> for ZoomLevel {
    type Error = ValidationError;

    fn try_from(z: i64) -> Result<Self, Self::Error> {
        Self::new(z)
    }
}

impl From<ZoomLevel> for u8 {
    fn from(z: ZoomLevel) -> u8 {
        z.0
    }
}

impl fmt::Display for ZoomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One driver observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub driver_id: String,
    pub pos: GeoPoint,
    /// Meters above sea level. Carried through storage, never used for grouping.
    pub alt: Option<f64>,
    /// Epoch milliseconds, UTC.
    pub ts: i64,
    /// Meters per second.
    pub speed: f64,
    /// Degrees clockwise from north, in `[0, 360)`.
    pub bearing: f64,
    /// Meters.
    pub accuracy: f64,
    pub payload: Payload,
}

/// Checks every field bound of `raw` and hands it back unchanged when they hold.
pub fn validate_event(raw: Event) -> Result<Event, ValidationError> {
    raw.pos.validate()?;
    if raw.ts <= 0 {
        return Err(ValidationError::NonPositiveTimestamp(raw.ts));
    }
    if !(raw.speed >= 0.0 && raw.speed.is_finite()) {
        return Err(ValidationError::NegativeSpeed(raw.speed));
    }
    if !(raw.accuracy >= 0.0 && raw.accuracy.is_finite()) {
        return Err(ValidationError::NegativeAccuracy(raw.accuracy));
    }
    if !(0.0..360.0).contains(&raw.bearing) {
        return Err(ValidationError::BearingOutOfRange(raw.bearing));
    }
    if let Some(alt) = raw.alt {
        if !alt.is_finite() {
            return Err(ValidationError::NonFiniteAltitude(alt));
        }
    }
    Ok(raw)
}

/// Closed latitude/longitude rectangle. Boxes crossing the antimeridian are
/// not representable; split them into two queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    min: GeoPoint,
    max: GeoPoint,
}

impl BoundingBox {
    pub fn new(min: GeoPoint, max: GeoPoint) -> Result<Self, ValidationError> {
        min.validate()?;
        max.validate()?;
        if min.lat > max.lat {
            return Err(ValidationError::InvertedBoundingBox("latitude"));
        }
        if min.lon > max.lon {
            return Err(ValidationError::InvertedBoundingBox("longitude"));
        }
        Ok(Self { min, max })
    }

    pub fn from_bounds(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self, ValidationError> {
        Self::new(GeoPoint::new(min_lat, min_lon), GeoPoint::new(max_lat, max_lon))
    }

    /// The whole lat/lon domain.
    pub fn world() -> Self {
        Self {
            min: GeoPoint::new(-90.0, -180.0),
            max: GeoPoint::new(90.0, 180.0),
        }
    }

    pub fn min(&self) -> GeoPoint {
        self.min
    }

    pub fn max(&self) -> GeoPoint {
        self.max
    }

    pub fn lat_extent(&self) -> f64 {
        self.max.lat - self.min.lat
    }

    pub fn lon_extent(&self) -> f64 {
        self.max.lon - self.min.lon
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::new((self.min.lat + self.max.lat) / 2.0, (self.min.lon + self.max.lon) / 2.0)
    }

    /// Closed-bounds containment.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.lat >= self.min.lat && p.lat <= self.max.lat && p.lon >= self.min.lon && p.lon <= self.max.lon
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.min.lat <= other.max.lat
            && other.min.lat <= self.max.lat
            && self.min.lon <= other.max.lon
            && other.min.lon <= self.max.lon
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            min: GeoPoint::new(self.min.lat.min(other.min.lat), self.min.lon.min(other.min.lon)),
            max: GeoPoint::new(self.max.lat.max(other.max.lat), self.max.lon.max(other.max.lon)),
        }
    }

    /// Degenerate box around a single valid point.
    pub fn point(p: GeoPoint) -> Result<Self, ValidationError> {
        Self::new(p, p)
    }
}

/// Closed epoch-millisecond interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimeRange {
    tmin: i64,
    tmax: i64,
}

impl TimeRange {
    pub fn new(tmin: i64, tmax: i64) -> Result<Self, ValidationError> {
        if tmin > tmax {
            return Err(ValidationError::InvertedTimeRange { tmin, tmax });
        }
        Ok(Self { tmin, tmax })
    }

    pub fn tmin(&self) -> i64 {
        self.tmin
    }

    pub fn tmax(&self) -> i64 {
        self.tmax
    }

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.tmin && ts <= self.tmax
    }

    pub fn union(&self, other: &TimeRange) -> TimeRange {
        TimeRange {
            tmin: self.tmin.min(other.tmin),
            tmax: self.tmax.max(other.tmax),
        }
    }
}

/// Snapped identity of a point at one zoom level: the point's latitude and
/// longitude were replaced by the `i`-th and `j`-th multiples of the level's
/// separation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct GridCell {
    pub zoom: ZoomLevel,
    pub i: i32,
    pub j: i32,
}

/// One aggregated marker: a cell center and how many events fell into it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterResult {
    pub cell: GridCell,
    pub pos: GeoPoint,
    pub count: u64,
}
