//! Great-circle distance and nearest-facility selection.
//!
//! Inputs are decimal degrees; distances are kilometers on a sphere of
//! radius [`EarthModel::radius_km`].

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::FacilityId;

/// Sphere radius used for routing, in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6372.797;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeoError {
    #[error("malformed coordinate: {0:?}")]
    MalformedCoordinate(String),
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    OutOfRange { lat: String, lon: String },
    #[error("no {0} registered")]
    EmptyCandidateSet(FacilityKind),
}

/// A validated latitude/longitude pair.
///
/// Latitude lies in `[-90, 90]`, longitude in `(-180, 180]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat, lon: p.lon }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::MalformedCoordinate(format!("{lat},{lon}")));
        }
        if !(-90.0..=90.0).contains(&lat) || lon <= -180.0 || lon > 180.0 {
            return Err(GeoError::OutOfRange {
                lat: lat.to_string(),
                lon: lon.to_string(),
            });
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

/// Parses text coordinates as they arrive inside message payloads.
pub fn validate_point(raw_lat: &str, raw_lon: &str) -> Result<GeoPoint, GeoError> {
    let parse = |raw: &str| -> Result<f64, GeoError> {
        let trimmed = raw.trim();
        // f64::from_str accepts "inf" and "NaN"; a coordinate must be a plain decimal.
        let plain = !trimmed.is_empty()
            && trimmed
                .bytes()
                .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'));
        if !plain {
            return Err(GeoError::MalformedCoordinate(raw.to_string()));
        }
        trimmed
            .parse::<f64>()
            .map_err(|_| GeoError::MalformedCoordinate(raw.to_string()))
    };
    let lat = parse(raw_lat)?;
    let lon = parse(raw_lon)?;
    GeoPoint::new(lat, lon).map_err(|e| match e {
        GeoError::OutOfRange { .. } => GeoError::OutOfRange {
            lat: raw_lat.to_string(),
            lon: raw_lon.to_string(),
        },
        other => other,
    })
}

/// Non-negative great-circle distance in kilometers.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DistanceKm(f64);

impl DistanceKm {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for DistanceKm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} km", self.0)
    }
}

/// Sphere used for distance computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarthModel {
    pub radius_km: f64,
    pub deg_to_rad: f64,
}

impl Default for EarthModel {
    fn default() -> Self {
        EarthModel {
            radius_km: EARTH_RADIUS_KM,
            deg_to_rad: std::f64::consts::PI / 180.0,
        }
    }
}

impl EarthModel {
    pub fn with_radius(radius_km: f64) -> Self {
        EarthModel {
            radius_km,
            ..EarthModel::default()
        }
    }

    /// Haversine distance: `2R asin(min(1, sqrt(h)))`.
    pub fn distance(&self, a: GeoPoint, b: GeoPoint) -> DistanceKm {
        let phi1 = a.lat * self.deg_to_rad;
        let phi2 = b.lat * self.deg_to_rad;
        // Sine halves are squared and float multiplication commutes, so
        // swapping the endpoints gives a bitwise identical result.
        let half_dphi = ((b.lat - a.lat) * self.deg_to_rad / 2.0).sin();
        let half_dlambda = ((b.lon - a.lon) * self.deg_to_rad / 2.0).sin();
        let h = half_dphi * half_dphi + phi1.cos() * phi2.cos() * half_dlambda * half_dlambda;
        let central = 2.0 * h.sqrt().clamp(0.0, 1.0).asin();
        DistanceKm(self.radius_km * central)
    }

    /// Upper bound on any distance: half the circumference.
    pub fn max_distance(&self) -> DistanceKm {
        DistanceKm(std::f64::consts::PI * self.radius_km)
    }
}

/// Haversine distance on the default earth model.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> DistanceKm {
    EarthModel::default().distance(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacilityKind {
    CareCenter,
    Hospital,
}

impl FacilityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FacilityKind::CareCenter => "care_center",
            FacilityKind::Hospital => "hospital",
        }
    }
}

impl fmt::Display for FacilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FacilityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "care_center" => Ok(FacilityKind::CareCenter),
            "hospital" => Ok(FacilityKind::Hospital),
            other => Err(format!("unknown facility kind {other:?}")),
        }
    }
}

/// A routing candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: FacilityId,
    pub kind: FacilityKind,
    pub location: GeoPoint,
}

/// Picks the closest site of `kind`; equal distances resolve to the smallest id.
pub fn nearest_facility<'a, I>(
    origin: GeoPoint,
    candidates: I,
    kind: FacilityKind,
    earth: &EarthModel,
) -> Result<(FacilityId, DistanceKm), GeoError>
where
    I: IntoIterator<Item = &'a Site>,
{
    let mut best: Option<(&FacilityId, DistanceKm)> = None;
    for site in candidates.into_iter().filter(|s| s.kind == kind) {
        let d = earth.distance(origin, site.location);
        best = match best {
            None => Some((&site.id, d)),
            Some((id, bd)) => match d.0.partial_cmp(&bd.0).unwrap_or(Ordering::Equal) {
                Ordering::Less => Some((&site.id, d)),
                Ordering::Equal if site.id < *id => Some((&site.id, d)),
                _ => Some((id, bd)),
            },
        };
    }
    best.map(|(id, d)| (id.clone(), d))
        .ok_or(GeoError::EmptyCandidateSet(kind))
}
