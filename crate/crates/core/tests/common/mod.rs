//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use geoprofile::classifier::{Subtype, SubtypeLabel};
use geoprofile::dataset::{CrimeSeries, Dataset};
use geoprofile::grid::Grid;
use geoprofile::likelihood::{M1Params, M2Params, NonResParams};
use geoprofile::posterior::{Family, Population};
use geoprofile::priors::{build_prior_set_from, PriorSet};
use geoprofile::synthetic::{sample_series, FamilyParams, SyntheticScenario};
use geoprofile::UtmPoint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn pt(e: f64, n: f64) -> UtmPoint {
    UtmPoint::new(18, e, n)
}

/// Midpoint rule over a polar grid around `z`: ∫₀^{r_max}∫₀^{2π} f(x) r dφ dr.
/// `f` receives the Cartesian point, so coordinates, angles and distances are
/// recomputed exactly as a caller would.
pub fn polar_integral(z: &UtmPoint, r_max: f64, nr: usize, nphi: usize, f: impl Fn(&UtmPoint) -> f64) -> f64 {
    let dr = r_max / nr as f64;
    let dphi = 2.0 * PI / nphi as f64;
    let mut total = 0.0;
    for i in 0..nr {
        let r = (i as f64 + 0.5) * dr;
        let mut ring = 0.0;
        for j in 0..nphi {
            let phi = (j as f64 + 0.5) * dphi;
            ring += f(&z.translated(r * phi.cos(), r * phi.sin()));
        }
        total += ring * r;
    }
    total * dr * dphi
}

/// Midpoint rule over the square [z − h, z + h]² with `m × m` cells.
pub fn square_integral(z: &UtmPoint, half_width: f64, m: usize, f: impl Fn(&UtmPoint) -> f64) -> f64 {
    let d = 2.0 * half_width / m as f64;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let dx = -half_width + (i as f64 + 0.5) * d;
            let dy = -half_width + (j as f64 + 0.5) * d;
            total += f(&z.translated(dx, dy));
        }
    }
    total * d * d
}

/// Radial step fine enough that the midpoint rule resolves the ring width.
pub fn radial_steps(sigma: f64, r_max: f64) -> usize {
    ((r_max / (sigma / 40.0)).ceil() as usize).max(400)
}

/// Mixed population with `per_type` offenders of each kind: compact
/// residents, buffer-zone residents and non-residents, anchors drawn inside
/// the default grid. Individual parameters vary around a type centre so
/// that donor-built priors have realistic spread.
pub fn population(seed: u64, per_type: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut series = Vec::new();
    for k in 0..3 * per_type {
        let anchor = pt(rng.gen_range(325.0..375.0), rng.gen_range(4345.0..4385.0));
        let (tag, params, n) = match k % 3 {
            0 => (
                "compact",
                FamilyParams::M1(M1Params::new(rng.gen_range(0.5..1.2)).unwrap()),
                rng.gen_range(6..12),
            ),
            1 => (
                "ring",
                FamilyParams::M2(M2Params::new(rng.gen_range(3.0..6.0), rng.gen_range(0.5..1.0)).unwrap()),
                rng.gen_range(8..14),
            ),
            _ => (
                "far",
                FamilyParams::NonRes(
                    NonResParams::new(
                        rng.gen_range(18.0..26.0),
                        rng.gen_range(1.5..3.0),
                        rng.gen_range(0.5..1.2),
                        rng.gen_range(0.2..0.4),
                    )
                    .unwrap(),
                ),
                rng.gen_range(6..12),
            ),
        };
        let sc = SyntheticScenario {
            params,
            true_anchor: anchor,
            n,
            replicates: 1,
            seed: rng.gen(),
        };
        let s = sample_series(&sc).expect("valid scenario").remove(0);
        series.push(CrimeSeries::from_planar(
            &format!("{tag}{:02}", k / 3),
            s.sites,
            s.anchor,
        ));
    }
    Dataset::from_series(series)
}

pub fn mixed_population(seed: u64) -> Dataset {
    population(seed, 4)
}

/// Upper-tail probability of a chi-square statistic.
pub fn chi_square_p_value(statistic: f64, dof: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(statistic)
}

pub fn chebyshev_cells(a: (usize, usize), b: (usize, usize)) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

/// Ground-truth labels for a `population`: compact offenders are M1, ring
/// offenders M2. Non-residents are recognised from their anchors, so their
/// label is irrelevant and they get M1.
pub fn population_labels(ds: &Dataset) -> std::collections::BTreeMap<String, SubtypeLabel> {
    ds.series
        .iter()
        .map(|s| {
            let kind = if s.offender_id.starts_with("ring") {
                Subtype::M2
            } else {
                Subtype::M1
            };
            (s.offender_id.clone(), SubtypeLabel::simple(kind))
        })
        .collect()
}

/// Regression fixture: priors built from a large donor population under
/// ground-truth labels, and a separate set of target offenders drawn from
/// the same generating process.
pub fn regression_fixture(grid: &Grid) -> (PriorSet, Dataset) {
    let donors = population(3, 30);
    let priors = build_prior_set_from(&donors, &population_labels(&donors), grid).expect("donor priors");
    (priors, population(4, 3))
}

/// The model each synthetic offender was generated from.
pub fn generating_model(series: &CrimeSeries) -> (Family, Population) {
    match &series.offender_id[..2] {
        "co" => (Family::M1, Population::Resident),
        "ri" => (Family::M2, Population::Resident),
        _ => (Family::NonRes, Population::NonResident),
    }
}
