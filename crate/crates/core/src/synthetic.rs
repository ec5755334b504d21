//! Synthetic offenders drawn from the likelihood families.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::CrimeSeries;
use crate::error::{Error, Result};
use crate::geodesy::UtmPoint;
use crate::likelihood::{M1Params, M2Params, NonResParams};

const MAX_DRAWS: usize = 1_000_000;
/// Radius cut of the proposal in units of σ; the mass beyond is below f64
/// resolution.
const RADIAL_CUT_SIGMAS: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FamilyParams {
    M1(M1Params),
    M2(M2Params),
    NonRes(NonResParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub params: FamilyParams,
    pub true_anchor: UtmPoint,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl SyntheticScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::Scenario(format!("series length {} < 3", self.n)));
        }
        match self.params {
            FamilyParams::M1(p) => M1Params::new(p.alpha).map(|_| ()),
            FamilyParams::M2(p) => M2Params::new(p.alpha, p.sigma).map(|_| ()),
            FamilyParams::NonRes(p) => NonResParams::new(p.alpha, p.sigma1, p.theta, p.sigma2).map(|_| ()),
        }
        .map_err(|e| Error::Scenario(e.to_string()))
    }
}

/// Radius with density ∝ r·exp(-(r−α)²/(2σ²)) on r ≥ 0, by rejection from
/// a truncated normal proposal accepted with probability r / r_max.
pub fn sample_ring_radius<R: Rng + ?Sized>(rng: &mut R, alpha: f64, sigma: f64) -> Result<f64> {
    let r_max = alpha + RADIAL_CUT_SIGMAS * sigma;
    let normal = Normal::new(alpha, sigma).map_err(|e| Error::Scenario(e.to_string()))?;
    for _ in 0..MAX_DRAWS {
        let r = normal.sample(rng);
        if !(0.0..=r_max).contains(&r) {
            continue;
        }
        if rng.gen::<f64>() * r_max < r {
            return Ok(r);
        }
    }
    Err(Error::Scenario(format!(
        "radial sampler exceeded {MAX_DRAWS} draws (alpha={alpha}, sigma={sigma})"
    )))
}

/// Angle from a normal around `theta` truncated to [0, 2π).
pub fn sample_angle<R: Rng + ?Sized>(rng: &mut R, theta: f64, sigma: f64) -> Result<f64> {
    let normal = Normal::new(theta, sigma).map_err(|e| Error::Scenario(e.to_string()))?;
    for _ in 0..MAX_DRAWS {
        let a = normal.sample(rng);
        if (0.0..2.0 * PI).contains(&a) {
            return Ok(a);
        }
    }
    Err(Error::Scenario(format!(
        "angle sampler exceeded {MAX_DRAWS} draws (theta={theta}, sigma={sigma})"
    )))
}

fn sample_site<R: Rng + ?Sized>(rng: &mut R, params: &FamilyParams, z: &UtmPoint) -> Result<UtmPoint> {
    let (r, phi) = match params {
        FamilyParams::M1(p) => {
            let sd = (2.0 / PI).sqrt() * p.alpha;
            let normal = Normal::new(0.0, sd).map_err(|e| Error::Scenario(e.to_string()))?;
            return Ok(z.translated(normal.sample(rng), normal.sample(rng)));
        }
        FamilyParams::M2(p) => (sample_ring_radius(rng, p.alpha, p.sigma)?, rng.gen_range(0.0..2.0 * PI)),
        FamilyParams::NonRes(p) => (
            sample_ring_radius(rng, p.alpha, p.sigma1)?,
            sample_angle(rng, p.theta, p.sigma2)?,
        ),
    };
    Ok(z.translated(r * phi.cos(), r * phi.sin()))
}

/// Replicate `k` uses ChaCha stream `k` of the scenario seed, so replicates
/// are independent and reproducible individually.
pub fn sample_series(sc: &SyntheticScenario) -> Result<Vec<CrimeSeries>> {
    sc.validate()?;
    (0..sc.replicates)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
            rng.set_stream(k as u64);
            let sites = (0..sc.n)
                .map(|_| sample_site(&mut rng, &sc.params, &sc.true_anchor))
                .collect::<Result<Vec<_>>>()?;
            Ok(CrimeSeries::from_planar(
                &format!("syn-{}-{k}", sc.seed),
                sites,
                Some(sc.true_anchor),
            ))
        })
        .collect()
}
