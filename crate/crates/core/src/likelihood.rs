//! Per-crime likelihood densities p(x | z, θ) in km⁻².
//!
//! Three families:
//! * `M1`: isotropic normal around the anchor with σ = √(2/π)·α, so that α is
//!   the mean offense distance.
//! * `M2`: ring-normal, a Gaussian in the radius centred on α (buffer zone).
//! * non-resident: the ring-normal radial factor times a Gaussian in the
//!   bearing φ ∈ [0, 2π), without wraparound.

use std::f64::consts::PI;

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::UtmPoint;

const TWO_PI: f64 = 2.0 * PI;
const SQRT_TWO_PI: f64 = 2.506_628_274_631_000_7;

/// Standard normal distribution function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be finite and > 0, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M1Params {
    pub alpha: f64,
}

impl M1Params {
    pub fn new(alpha: f64) -> Result<Self> {
        check_positive("alpha", alpha)?;
        Ok(Self { alpha })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M2Params {
    pub alpha: f64,
    pub sigma: f64,
}

impl M2Params {
    pub fn new(alpha: f64, sigma: f64) -> Result<Self> {
        check_positive("alpha", alpha)?;
        check_positive("sigma", sigma)?;
        Ok(Self { alpha, sigma })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonResParams {
    pub alpha: f64,
    pub sigma1: f64,
    pub theta: f64,
    pub sigma2: f64,
}

impl NonResParams {
    pub fn new(alpha: f64, sigma1: f64, theta: f64, sigma2: f64) -> Result<Self> {
        check_positive("alpha", alpha)?;
        check_positive("sigma1", sigma1)?;
        check_positive("sigma2", sigma2)?;
        if !theta.is_finite() || !(0.0..TWO_PI).contains(&theta) {
            return Err(Error::Parameter(format!("theta {theta} outside [0, 2π)")));
        }
        Ok(Self {
            alpha,
            sigma1,
            theta,
            sigma2,
        })
    }
}

/// M1 density: `exp(-π r² / (4α²)) / (4α²)`.
pub fn m1_density(x: &UtmPoint, z: &UtmPoint, p: &M1Params) -> f64 {
    let (dx, dy) = x.offset_from(z);
    m1_log_density_sq(dx * dx + dy * dy, p.alpha).exp()
}

/// log M1 density given the squared distance.
#[inline]
pub fn m1_log_density_sq(r2: f64, alpha: f64) -> f64 {
    let four_a2 = 4.0 * alpha * alpha;
    -four_a2.ln() - PI * r2 / four_a2
}

/// Radial integral ∫₀^∞ r·exp(-(r-α)²/(2σ²)) dr.
pub fn radial_normalizer(alpha: f64, sigma: f64) -> f64 {
    sigma * sigma * (-alpha * alpha / (2.0 * sigma * sigma)).exp()
        + SQRT_TWO_PI * alpha * sigma * (1.0 - std_normal_cdf(-alpha / sigma))
}

/// Normalizing constant of the ring-normal kernel over the plane.
pub fn ring_normal_normalizer(alpha: f64, sigma: f64) -> f64 {
    TWO_PI * radial_normalizer(alpha, sigma)
}

/// Angular integral ∫₀^{2π} exp(-(φ-ϑ)²/(2σ₂²)) dφ.
pub fn angular_normalizer(theta: f64, sigma2: f64) -> f64 {
    sigma2 * SQRT_TWO_PI * (std_normal_cdf((TWO_PI - theta) / sigma2) - std_normal_cdf(-theta / sigma2))
}

pub fn m2_density(x: &UtmPoint, z: &UtmPoint, p: &M2Params) -> f64 {
    let r = x.distance(z);
    let d = r - p.alpha;
    (-d * d / (2.0 * p.sigma * p.sigma)).exp() / ring_normal_normalizer(p.alpha, p.sigma)
}

/// Counter-clockwise bearing from the positive easting axis, in [0, 2π).
pub fn arg_angle(dx: f64, dy: f64) -> Result<f64> {
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    let a = dy.atan2(dx);
    let a = if a < 0.0 { a + TWO_PI } else { a };
    // -tiny + 2π rounds to 2π
    Ok(if a >= TWO_PI { 0.0 } else { a })
}

/// Unnormalized non-resident kernel q₁(r)·q₂(φ).
pub fn nonres_kernel(x: &UtmPoint, z: &UtmPoint, p: &NonResParams) -> Result<f64> {
    let (dx, dy) = x.offset_from(z);
    let phi = arg_angle(dx, dy)?;
    let dr = dx.hypot(dy) - p.alpha;
    let da = phi - p.theta;
    Ok((-dr * dr / (2.0 * p.sigma1 * p.sigma1) - da * da / (2.0 * p.sigma2 * p.sigma2)).exp())
}

pub fn nonres_density(x: &UtmPoint, z: &UtmPoint, p: &NonResParams) -> Result<f64> {
    let k = nonres_kernel(x, z, p)?;
    Ok(k / (radial_normalizer(p.alpha, p.sigma1) * angular_normalizer(p.theta, p.sigma2)))
}
