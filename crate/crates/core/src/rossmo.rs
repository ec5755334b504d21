//! Rossmo hit-score baseline with Manhattan distances.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::nn_distances_with;
use crate::dataset::CrimeSeries;
use crate::error::{Error, Result};
use crate::geodesy::UtmPoint;
use crate::grid::{Grid, PosteriorSurface};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RossmoParams {
    /// Buffer radius in km.
    pub b: f64,
    pub g: f64,
    pub h: f64,
    pub k: f64,
}

impl RossmoParams {
    pub fn new(b: f64) -> Result<Self> {
        Self::with_exponents(b, 1.2, 1.2, 1.0)
    }

    pub fn with_exponents(b: f64, g: f64, h: f64, k: f64) -> Result<Self> {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::Parameter(format!("buffer radius must be > 0, got {b}")));
        }
        if !(k.is_finite() && k > 0.0) || !g.is_finite() || !h.is_finite() {
            return Err(Error::Parameter(format!(
                "invalid decay parameters g={g}, h={h}, k={k}"
            )));
        }
        Ok(Self { b, g, h, k })
    }
}

pub fn manhattan_distance(a: &UtmPoint, b: &UtmPoint) -> f64 {
    (a.easting - b.easting).abs() + (a.northing - b.northing).abs()
}

/// Half the mean Manhattan nearest-neighbour distance between crimes.
/// Returns 0 when all sites coincide.
pub fn buffer_radius(series: &CrimeSeries) -> Result<f64> {
    let nn = nn_distances_with(&series.sites, manhattan_distance)?;
    Ok(0.5 * nn.iter().sum::<f64>() / nn.len() as f64)
}

/// Parameters for a series, falling back to half the cell diagonal when
/// every crime sits at the same spot.
pub fn default_params(series: &CrimeSeries, grid: &Grid) -> Result<RossmoParams> {
    let b = buffer_radius(series)?;
    if b > 0.0 {
        return RossmoParams::new(b);
    }
    let fallback = 0.5 * grid.cell_width().hypot(grid.cell_height());
    warn!(
        "offender {}: coincident crime sites give b = 0; using {fallback:.3} km",
        series.offender_id
    );
    RossmoParams::new(fallback)
}

/// `k/d^h` beyond the buffer, `k·b^(g−h)/(2b − d)^g` inside it.
pub fn rossmo_decay(d: f64, p: &RossmoParams) -> f64 {
    if d > p.b {
        p.k / d.powf(p.h)
    } else {
        p.k * p.b.powf(p.g - p.h) / (2.0 * p.b - d).powf(p.g)
    }
}

/// Unnormalized hit score at every cell centre, row-major.
pub fn hit_scores(sites: &[UtmPoint], grid: &Grid, p: &RossmoParams) -> Vec<f64> {
    grid.centers()
        .par_iter()
        .map(|y| sites.iter().map(|x| rossmo_decay(manhattan_distance(x, y), p)).sum())
        .collect()
}

/// Hit scores normalized to sum 1, for uniform handling with posteriors.
pub fn hit_score_surface(series: &CrimeSeries, grid: &Grid, p: &RossmoParams) -> Result<PosteriorSurface> {
    PosteriorSurface::from_weights(*grid, hit_scores(&series.sites, grid, p))
}
