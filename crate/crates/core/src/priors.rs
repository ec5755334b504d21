//! Leave-one-out priors: a kernel-smoothed anchor surface and tabulated
//! bounded-support densities for the model parameters.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::classifier::{ground_truth_residency, Residency, Subtype, SubtypeLabel};
use crate::dataset::{leave_one_out, CrimeSeries, Dataset};
use crate::error::{Error, Result};
use crate::geodesy::UtmPoint;
use crate::grid::{Grid, PosteriorSurface};
use crate::likelihood::arg_angle;

pub const TABULATION_NODES: usize = 512;
pub const DISTANCE_SUPPORT: (f64, f64) = (0.0, 150.0);
pub const ANGLE_SUPPORT: (f64, f64) = (0.0, 2.0 * PI);
pub const RADIAL_SPREAD_SUPPORT: (f64, f64) = (0.05, 20.0);
pub const ANGULAR_SPREAD_SUPPORT: (f64, f64) = (0.02, PI);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamKind {
    DistanceM1,
    DistanceM2,
    DistanceNonRes,
    AngleM2,
    AngleNonRes,
    SpreadRadial,
    SpreadAngular,
}

impl ParamKind {
    pub const ALL: [ParamKind; 7] = [
        ParamKind::DistanceM1,
        ParamKind::DistanceM2,
        ParamKind::DistanceNonRes,
        ParamKind::AngleM2,
        ParamKind::AngleNonRes,
        ParamKind::SpreadRadial,
        ParamKind::SpreadAngular,
    ];

    pub fn support(self) -> (f64, f64) {
        match self {
            ParamKind::DistanceM1 | ParamKind::DistanceM2 | ParamKind::DistanceNonRes => DISTANCE_SUPPORT,
            ParamKind::AngleM2 | ParamKind::AngleNonRes => ANGLE_SUPPORT,
            ParamKind::SpreadRadial => RADIAL_SPREAD_SUPPORT,
            ParamKind::SpreadAngular => ANGULAR_SPREAD_SUPPORT,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::DistanceM1 => "distance_m1",
            ParamKind::DistanceM2 => "distance_m2",
            ParamKind::DistanceNonRes => "distance_nonres",
            ParamKind::AngleM2 => "angle_m2",
            ParamKind::AngleNonRes => "angle_nonres",
            ParamKind::SpreadRadial => "spread_radial",
            ParamKind::SpreadAngular => "spread_angular",
        }
    }
}

/// Piecewise-linear density tabulated on equally spaced nodes over
/// `[lo, hi]`, zero outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPrior {
    pub kind: ParamKind,
    pub lo: f64,
    pub hi: f64,
    pub density: Vec<f64>,
    cdf: Vec<f64>,
}

impl ParamPrior {
    /// Normalizes `values` (trapezoid rule) into a density.
    pub fn from_tabulation(kind: ParamKind, lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || !(hi > lo) {
            return Err(Error::Input("prior tabulation needs >= 2 nodes and hi > lo".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Input("prior tabulation must be finite and >= 0".into()));
        }
        let step = (hi - lo) / (values.len() - 1) as f64;
        let mut cdf = Vec::with_capacity(values.len());
        cdf.push(0.0);
        for w in values.windows(2) {
            let last = *cdf.last().unwrap();
            cdf.push(last + 0.5 * step * (w[0] + w[1]));
        }
        let total = *cdf.last().unwrap();
        if total <= 0.0 {
            return Err(Error::Input("prior tabulation has zero mass".into()));
        }
        Ok(Self {
            kind,
            lo,
            hi,
            density: values.into_iter().map(|v| v / total).collect(),
            cdf: cdf.into_iter().map(|c| c / total).collect(),
        })
    }

    pub fn flat(kind: ParamKind) -> Self {
        let (lo, hi) = kind.support();
        Self::from_tabulation(kind, lo, hi, vec![1.0; TABULATION_NODES]).expect("flat prior")
    }

    /// Unit mass at `value`; quadrature collapses to a single node there.
    pub fn point_mass(kind: ParamKind, value: f64) -> Self {
        Self {
            kind,
            lo: value,
            hi: value,
            density: Vec::new(),
            cdf: Vec::new(),
        }
    }

    pub fn is_point_mass(&self) -> bool {
        self.density.is_empty()
    }

    fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.density.len() - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.density.len()).map(|i| self.lo + i as f64 * step).collect()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if self.is_point_mass() || x < self.lo || x > self.hi {
            return 0.0;
        }
        let t = (x - self.lo) / self.step();
        let i = (t.floor() as usize).min(self.density.len() - 2);
        let f = t - i as f64;
        self.density[i] * (1.0 - f) + self.density[i + 1] * f
    }

    /// Integral over the support by the trapezoid rule on the tabulation.
    pub fn integral(&self) -> f64 {
        if self.is_point_mass() {
            return 1.0;
        }
        let step = self.step();
        self.density.windows(2).map(|w| 0.5 * step * (w[0] + w[1])).sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if self.is_point_mass() {
            return if x >= self.lo { 1.0 } else { 0.0 };
        }
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let step = self.step();
        let t = (x - self.lo) / step;
        let i = (t.floor() as usize).min(self.density.len() - 2);
        let dx = x - (self.lo + i as f64 * step);
        let slope = (self.density[i + 1] - self.density[i]) / step;
        self.cdf[i] + self.density[i] * dx + 0.5 * slope * dx * dx
    }

    /// Inverse of the piecewise-quadratic CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        if self.is_point_mass() {
            return self.lo;
        }
        let p = p.clamp(0.0, 1.0);
        let i = match self.cdf.binary_search_by(|c| c.total_cmp(&p)) {
            Ok(i) => return self.lo + i as f64 * self.step(),
            Err(i) => i.clamp(1, self.cdf.len() - 1) - 1,
        };
        let step = self.step();
        let c = p - self.cdf[i];
        let f0 = self.density[i];
        let slope = (self.density[i + 1] - f0) / step;
        let disc = (f0 * f0 + 2.0 * slope * c).max(0.0);
        let denom = f0 + disc.sqrt();
        let dx = if denom > 0.0 { 2.0 * c / denom } else { 0.0 };
        (self.lo + i as f64 * step + dx.clamp(0.0, step)).min(self.hi)
    }

    /// Equal-probability midpoint nodes at quantiles `(j + ½)/m`.
    pub fn quantile_nodes(&self, m: usize) -> Vec<f64> {
        if self.is_point_mass() {
            return vec![self.lo];
        }
        (0..m.max(1))
            .map(|j| self.quantile((j as f64 + 0.5) / m.max(1) as f64))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["node", "density"])?;
        for (x, d) in self.nodes().iter().zip(&self.density) {
            wtr.write_record([format!("{x:.9}"), format!("{d:.12e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// Silverman's rule-of-thumb bandwidth `0.9·min(sd, IQR/1.34)·n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (_, sd) = mean_sd(&sorted);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (samples.len() as f64).powf(-0.2)
}

/// Gaussian KDE reflected at both support boundaries, tabulated on 512 nodes.
pub fn bounded_density_1d(kind: ParamKind, samples: &[f64], lo: f64, hi: f64) -> Result<ParamPrior> {
    if samples.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{}: {} samples, need at least 3",
            kind.name(),
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|s| !s.is_finite() || **s < lo || **s > hi) {
        return Err(Error::Input(format!(
            "{}: sample {bad} outside [{lo}, {hi}]",
            kind.name()
        )));
    }
    let step = (hi - lo) / (TABULATION_NODES - 1) as f64;
    let h = silverman_bandwidth(samples).max(2.0 * step);
    let values = (0..TABULATION_NODES)
        .map(|i| {
            let x = lo + i as f64 * step;
            samples
                .iter()
                .map(|s| {
                    let k = |c: f64| (-0.5 * ((x - c) / h).powi(2)).exp();
                    k(*s) + k(2.0 * lo - s) + k(2.0 * hi - s)
                })
                .sum::<f64>()
        })
        .collect();
    ParamPrior::from_tabulation(kind, lo, hi, values)
}

/// Anchor-point prior: normalized mass per grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrior {
    pub surface: PosteriorSurface,
}

impl AnchorPrior {
    pub fn flat(grid: Grid) -> Self {
        Self {
            surface: PosteriorSurface::uniform(grid),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.surface.grid
    }
}

/// Product-Gaussian KDE with per-axis Silverman bandwidths `σ_j·n^(-1/6)`,
/// floored at one cell, evaluated at cell centres.
pub fn kde2d(points: &[UtmPoint], grid: &Grid) -> Result<AnchorPrior> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "anchor prior needs at least 2 points, got {}",
            points.len()
        )));
    }
    let factor = (points.len() as f64).powf(-1.0 / 6.0);
    let mut xs: Vec<f64> = points.iter().map(|p| p.easting).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p.northing).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let hx = (mean_sd(&xs).1 * factor).max(grid.cell_width());
    let hy = (mean_sd(&ys).1 * factor).max(grid.cell_height());
    kde2d_with_bandwidth(points, grid, hx, hy)
}

/// Product-Gaussian KDE with fixed per-axis bandwidths in km.
pub fn kde2d_with_bandwidth(points: &[UtmPoint], grid: &Grid, hx: f64, hy: f64) -> Result<AnchorPrior> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "anchor prior needs at least 2 points, got {}",
            points.len()
        )));
    }
    if !(hx > 0.0 && hy > 0.0) {
        return Err(Error::Parameter(format!("bandwidths must be > 0, got ({hx}, {hy})")));
    }
    // sorted so the result does not depend on donor order
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.easting, p.northing)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let weights = grid
        .centers()
        .iter()
        .map(|c| {
            pts.iter()
                .map(|(x, y)| {
                    let u = (c.easting - x) / hx;
                    let v = (c.northing - y) / hy;
                    (-0.5 * (u * u + v * v)).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(AnchorPrior {
        surface: PosteriorSurface::from_weights(*grid, weights)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    pub anchor: AnchorPrior,
    pub params: BTreeMap<ParamKind, ParamPrior>,
    pub source_offender_count: usize,
}

impl PriorSet {
    pub fn get(&self, kind: ParamKind) -> Result<&ParamPrior> {
        self.params
            .get(&kind)
            .ok_or_else(|| Error::MissingPrior(kind.name().to_string()))
    }

    /// Flat anchor prior and flat parameter priors on every support.
    pub fn flat(grid: Grid) -> Self {
        Self {
            anchor: AnchorPrior::flat(grid),
            params: ParamKind::ALL.iter().map(|k| (*k, ParamPrior::flat(*k))).collect(),
            source_offender_count: 0,
        }
    }

    pub fn with_param(mut self, prior: ParamPrior) -> Self {
        self.params.insert(prior.kind, prior);
        self
    }
}

/// Per-offender summaries used as one KDE sample each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DonorSummary {
    pub mean_distance: f64,
    pub mean_angle: Option<f64>,
    pub radius_sd: f64,
    pub angle_sd: Option<f64>,
}

pub fn donor_summary(series: &CrimeSeries) -> Option<DonorSummary> {
    let anchor = series.anchor?;
    let radii: Vec<f64> = series.sites.iter().map(|s| s.distance(&anchor)).collect();
    let angles: Vec<f64> = series
        .sites
        .iter()
        .filter_map(|s| {
            let (dx, dy) = s.offset_from(&anchor);
            arg_angle(dx, dy).ok()
        })
        .collect();
    let (mean_distance, radius_sd) = mean_sd(&radii);
    let (mean_angle, angle_sd) = if angles.is_empty() {
        (None, None)
    } else {
        let (m, sd) = mean_sd(&angles);
        (Some(m), if angles.len() >= 2 { Some(sd) } else { None })
    };
    Some(DonorSummary {
        mean_distance,
        mean_angle,
        radius_sd,
        angle_sd,
    })
}

fn estimate_or_flat(kind: ParamKind, samples: Vec<f64>) -> ParamPrior {
    let (lo, hi) = kind.support();
    let clamped: Vec<f64> = samples.into_iter().map(|s| s.clamp(lo, hi)).collect();
    match bounded_density_1d(kind, &clamped, lo, hi) {
        Ok(p) => p,
        Err(e) => {
            warn!("{}: falling back to a flat prior ({e})", kind.name());
            ParamPrior::flat(kind)
        }
    }
}

/// Priors from `donors`, every series of which is treated as known.
///
/// Donor populations: resident `M1` offenders give the M1 distance prior,
/// resident `M2` offenders the M2 distance and angle priors, non-residents
/// the non-resident distance and angle priors. Spread priors pool the `M2`
/// residents and non-residents. Donors without an anchor are ignored.
pub fn build_prior_set_from(
    donors: &Dataset,
    labels: &BTreeMap<String, SubtypeLabel>,
    grid: &Grid,
) -> Result<PriorSet> {
    let mut anchors = Vec::new();
    let mut samples: BTreeMap<ParamKind, Vec<f64>> = BTreeMap::new();
    for s in &donors.series {
        let (Some(anchor), Some(summary), Some(residency)) = (s.anchor, donor_summary(s), ground_truth_residency(s))
        else {
            continue;
        };
        anchors.push(anchor);
        let subtype = labels.get(&s.offender_id).map(|l| l.kind);
        let (distance_kind, angle_kind) = match (residency, subtype) {
            (Residency::NonResident, _) => (ParamKind::DistanceNonRes, Some(ParamKind::AngleNonRes)),
            (Residency::Resident, Some(Subtype::M1)) => (ParamKind::DistanceM1, None),
            (Residency::Resident, Some(Subtype::M2)) => (ParamKind::DistanceM2, Some(ParamKind::AngleM2)),
            _ => continue,
        };
        samples.entry(distance_kind).or_default().push(summary.mean_distance);
        if let Some(angle_kind) = angle_kind {
            if let Some(a) = summary.mean_angle {
                samples.entry(angle_kind).or_default().push(a);
            }
            samples
                .entry(ParamKind::SpreadRadial)
                .or_default()
                .push(summary.radius_sd);
            if let Some(sd) = summary.angle_sd {
                samples.entry(ParamKind::SpreadAngular).or_default().push(sd);
            }
        }
    }

    let anchor = kde2d(&anchors, grid)?;
    let params = ParamKind::ALL
        .iter()
        .map(|k| (*k, estimate_or_flat(*k, samples.remove(k).unwrap_or_default())))
        .collect();
    Ok(PriorSet {
        anchor,
        params,
        source_offender_count: anchors.len(),
    })
}

/// Leave-one-out priors for `excluded_offender`: built only from the
/// dataset with that offender removed.
pub fn build_prior_set(
    ds: &Dataset,
    excluded_offender: &str,
    labels: &BTreeMap<String, SubtypeLabel>,
    grid: &Grid,
) -> Result<PriorSet> {
    let donors = leave_one_out(ds, excluded_offender)?;
    if donors.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no donor offenders remain after excluding {excluded_offender}"
        )));
    }
    build_prior_set_from(&donors, labels, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp, Gamma};

    #[test]
    fn flat_prior_integrates_and_inverts() {
        let p = ParamPrior::flat(ParamKind::DistanceM1);
        assert!((p.integral() - 1.0).abs() < 1e-12);
        assert!((p.quantile(0.5) - 75.0).abs() < 1e-9);
        assert!((p.cdf(30.0) - 0.2).abs() < 1e-12);
        assert_eq!(p.pdf(-0.1), 0.0);
        assert_eq!(p.pdf(150.1), 0.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let samples = [2.0, 3.0, 3.5, 5.0, 8.0, 13.0];
        let p = bounded_density_1d(ParamKind::DistanceM2, &samples, 0.0, 150.0).unwrap();
        for i in 1..100 {
            let q = i as f64 / 100.0;
            assert!((p.cdf(p.quantile(q)) - q).abs() < 1e-9, "q={q}");
        }
        let nodes = p.quantile_nodes(32);
        assert_eq!(nodes.len(), 32);
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn degenerate_samples_peak_at_value() {
        let p = bounded_density_1d(ParamKind::DistanceM1, &[4.0; 5], 0.0, 150.0).unwrap();
        let nodes = p.nodes();
        let mode = nodes
            .iter()
            .zip(&p.density)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let h = 2.0 * 150.0 / 511.0;
        assert!((mode - 4.0).abs() <= h);
    }

    #[test]
    fn support_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Exp::new(1.0).unwrap();
        let s: Vec<f64> = (0..200).map(|_| e.sample(&mut rng)).collect();
        let p = bounded_density_1d(ParamKind::SpreadRadial, &s, 0.0, 20.0).unwrap();
        assert_eq!(p.pdf(-0.1), 0.0);
        assert!((p.integral() - 1.0).abs() < 1e-6);
        assert!(bounded_density_1d(ParamKind::SpreadRadial, &s[..2], 0.0, 20.0).is_err());
        assert!(bounded_density_1d(ParamKind::SpreadRadial, &[1.0, 2.0, 25.0], 0.0, 20.0).is_err());
    }

    #[test]
    fn gamma_samples_ks_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = Gamma::new(2.0, 1.0).unwrap();
        let s: Vec<f64> = (0..1000).map(|_| g.sample(&mut rng)).collect();
        let p = bounded_density_1d(ParamKind::DistanceM1, &s, 0.0, 20.0).unwrap();
        let true_cdf = |x: f64| 1.0 - (-x).exp() * (1.0 + x);
        let ks = (0..2000)
            .map(|i| i as f64 * 0.01)
            .map(|x| (p.cdf(x) - true_cdf(x)).abs())
            .fold(0.0, f64::max);
        assert!(ks < 0.08, "ks={ks}");
    }

    #[test]
    fn point_mass_collapses() {
        let p = ParamPrior::point_mass(ParamKind::DistanceM1, 3.0);
        assert_eq!(p.quantile_nodes(32), vec![3.0]);
        assert_eq!(p.integral(), 1.0);
    }

    fn grid() -> Grid {
        Grid::new(0.0, 20.0, 0.0, 20.0, 20, 20).unwrap()
    }

    #[test]
    fn kde_mode_contains_cluster() {
        let g = grid();
        let pts: Vec<_> = (0..6)
            .map(|i| UtmPoint::new(18, 7.3 + 1e-4 * i as f64, 12.6 - 1e-4 * i as f64))
            .collect();
        let prior = kde2d(&pts, &g).unwrap();
        assert_eq!(prior.surface.argmax(), (12, 7));
        assert!((prior.surface.total() - 1.0).abs() < 1e-9);
        assert!(kde2d(&pts[..1], &g).is_err());
    }

    #[test]
    fn kde_point_reflection_symmetry() {
        let g = grid();
        let pts = [UtmPoint::new(18, 6.0, 8.0), UtmPoint::new(18, 14.0, 12.0)];
        let s = kde2d(&pts, &g).unwrap().surface;
        for r in 0..20 {
            for c in 0..20 {
                assert!((s.at(r, c) - s.at(19 - r, 19 - c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kde_flattens_with_lattice() {
        let g = grid();
        let pts: Vec<_> = (0..100)
            .map(|i| UtmPoint::new(18, 1.0 + 2.0 * (i % 10) as f64, 1.0 + 2.0 * (i / 10) as f64))
            .collect();
        let s = kde2d_with_bandwidth(&pts, &g, 20.0, 20.0).unwrap().surface;
        let max = s.mass.iter().copied().fold(0.0, f64::max);
        let min = s.mass.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(max / min < 1.5, "ratio {}", max / min);
    }

    #[test]
    fn kde_order_invariant() {
        let g = grid();
        let mut pts: Vec<_> = (0..9)
            .map(|i| UtmPoint::new(18, 2.0 + (i * 7 % 13) as f64, 3.0 + (i * 5 % 11) as f64))
            .collect();
        let a = kde2d(&pts, &g).unwrap();
        pts.reverse();
        pts.rotate_left(4);
        assert_eq!(a, kde2d(&pts, &g).unwrap());
    }
}
