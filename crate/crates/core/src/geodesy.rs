//! WGS84 geographic coordinates to planar UTM kilometres.
//!
//! The forward projection uses Krüger's series in the conformal-latitude
//! form, truncated after the fourth-order coefficients. Errors against an
//! exact transverse Mercator are well below a millimetre inside a zone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WGS84_A_KM: f64 = 6378.137;
const WGS84_F: f64 = 1.0 / 298.257_223_563;
const SCALE_CENTRAL_MERIDIAN: f64 = 0.9996;
const FALSE_EASTING_KM: f64 = 500.0;
const FALSE_NORTHING_SOUTH_KM: f64 = 10_000.0;
const MAX_ABS_LAT: f64 = 84.0;

/// Zone used for every point of the jurisdiction.
pub const JURISDICTION_ZONE: u8 = 18;

/// A WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::Input(format!("latitude {lat} outside [-90, 90]")));
        }
        if !lon.is_finite() || !(-180.0..180.0).contains(&lon) {
            return Err(Error::Input(format!("longitude {lon} outside [-180, 180)")));
        }
        Ok(Self { lat, lon })
    }
}

/// Planar UTM position, easting and northing in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtmPoint {
    pub zone: u8,
    pub easting: f64,
    pub northing: f64,
}

impl UtmPoint {
    pub fn new(zone: u8, easting: f64, northing: f64) -> Self {
        Self {
            zone,
            easting,
            northing,
        }
    }

    /// Offset `self - origin` in km.
    #[inline]
    pub fn offset_from(&self, origin: &UtmPoint) -> (f64, f64) {
        (self.easting - origin.easting, self.northing - origin.northing)
    }

    #[inline]
    pub fn distance(&self, other: &UtmPoint) -> f64 {
        let (dx, dy) = self.offset_from(other);
        dx.hypot(dy)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> UtmPoint {
        UtmPoint::new(self.zone, self.easting + dx, self.northing + dy)
    }
}

/// UTM zone number for a longitude.
pub fn utm_zone(lon: f64) -> Result<u8> {
    if !lon.is_finite() {
        return Err(Error::Input(format!("non-finite longitude {lon}")));
    }
    let zone = ((lon + 180.0) / 6.0).floor() as i64 + 1;
    Ok(zone.clamp(1, 60) as u8)
}

fn central_meridian_deg(zone: u8) -> f64 {
    f64::from(zone) * 6.0 - 183.0
}

struct KruegerCoefficients {
    rectifying_radius: f64,
    alpha: [f64; 4],
    eccentricity: f64,
}

fn coefficients() -> KruegerCoefficients {
    let n = WGS84_F / (2.0 - WGS84_F);
    let n2 = n * n;
    let n3 = n2 * n;
    let n4 = n3 * n;
    KruegerCoefficients {
        rectifying_radius: WGS84_A_KM / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0),
        alpha: [
            n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0,
            13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0,
            61.0 * n3 / 240.0 - 103.0 * n4 / 140.0,
            49561.0 * n4 / 161_280.0,
        ],
        eccentricity: (WGS84_F * (2.0 - WGS84_F)).sqrt(),
    }
}

/// Project a geographic point to UTM. With `forced_zone` the projection
/// uses that zone's central meridian even for points outside the zone.
pub fn latlon_to_utm(p: GeoPoint, forced_zone: Option<u8>) -> Result<UtmPoint> {
    if !p.lat.is_finite() || p.lat.abs() > MAX_ABS_LAT {
        return Err(Error::OutOfDomain(p.lat));
    }
    let zone = match forced_zone {
        Some(z) if (1..=60).contains(&z) => z,
        Some(z) => return Err(Error::Input(format!("zone {z} outside [1, 60]"))),
        None => utm_zone(p.lon)?,
    };

    let c = coefficients();
    let phi = p.lat.to_radians();
    let lambda = (p.lon - central_meridian_deg(zone)).to_radians();

    // conformal latitude via tan(chi) = sinh(atanh(sin phi) - e atanh(e sin phi))
    let sin_phi = phi.sin();
    let t = (sin_phi.atanh() - c.eccentricity * (c.eccentricity * sin_phi).atanh()).sinh();
    let xi_prime = t.atan2(lambda.cos());
    let eta_prime = (lambda.sin() / (1.0 + t * t).sqrt()).atanh();

    let mut xi = xi_prime;
    let mut eta = eta_prime;
    for (j, a) in c.alpha.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi += a * (k * xi_prime).sin() * (k * eta_prime).cosh();
        eta += a * (k * xi_prime).cos() * (k * eta_prime).sinh();
    }

    let easting = FALSE_EASTING_KM + SCALE_CENTRAL_MERIDIAN * c.rectifying_radius * eta;
    let mut northing = SCALE_CENTRAL_MERIDIAN * c.rectifying_radius * xi;
    if p.lat < 0.0 {
        northing += FALSE_NORTHING_SOUTH_KM;
    }
    Ok(UtmPoint::new(zone, easting, northing))
}
