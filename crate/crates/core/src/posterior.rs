//! Marginal anchor-point posteriors on the jurisdiction grid.
//!
//! For every cell centre `z` the engine evaluates
//!
//! ```text
//! mass(z) ∝ h(z) · Σ_j w_j · Π_i p(x_i | z, θ_j)
//! ```
//!
//! where the nodes `θ_j` are a tensor product of equal-probability quantile
//! nodes of the parameter priors (midpoint rule, `w_j = Π 1/m`). Products
//! are accumulated as log-likelihoods and the node sum is a log-sum-exp.
//!
//! The per-cell work is reduced with two exact identities:
//! * `Σ (r_i − α)² = Σ (r_i − r̄)² + n (r̄ − α)²`, so each node costs O(1)
//!   once the cell's radii are summarized;
//! * the non-resident likelihood factors into a radial part in `(α, σ₁)` and
//!   an angular part in `(ϑ, σ₂)`, so the four-dimensional node sum is the
//!   product of two two-dimensional sums.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{Subtype, SubtypeLabel};
use crate::dataset::CrimeSeries;
use crate::error::{Error, Result};
use crate::geodesy::UtmPoint;
use crate::grid::{Grid, PosteriorSurface};
use crate::likelihood::{angular_normalizer, arg_angle, radial_normalizer};
use crate::priors::{AnchorPrior, ParamKind, ParamPrior, PriorSet};

/// Distance below which a crime is treated as sitting on the candidate anchor.
const COINCIDENT_KM: f64 = 1e-12;
/// Radius substituted for a coincident crime under the non-resident model.
const COINCIDENT_RADIUS_KM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    M1,
    M2,
    NonRes,
}

/// Which donor population supplies the distance and angle priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Population {
    Resident,
    NonResident,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Param {
    Distance,
    RadialSpread,
    Angle,
    AngularSpread,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub distance_nodes: usize,
    pub angle_nodes: usize,
    pub spread_nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            distance_nodes: 32,
            angle_nodes: 32,
            spread_nodes: 8,
        }
    }
}

impl QuadratureConfig {
    pub fn scaled(&self, factor: usize) -> Self {
        Self {
            distance_nodes: self.distance_nodes * factor,
            angle_nodes: self.angle_nodes * factor,
            spread_nodes: self.spread_nodes * factor,
        }
    }

    fn nodes_for(&self, param: Param) -> usize {
        match param {
            Param::Distance => self.distance_nodes,
            Param::Angle => self.angle_nodes,
            Param::RadialSpread | Param::AngularSpread => self.spread_nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub population: Population,
    pub quadrature: QuadratureConfig,
    pub fixed_overrides: BTreeMap<Param, f64>,
}

impl ModelSpec {
    pub fn new(family: Family, population: Population) -> Self {
        Self {
            family,
            population,
            quadrature: QuadratureConfig::default(),
            fixed_overrides: BTreeMap::new(),
        }
    }

    pub fn with_quadrature(mut self, q: QuadratureConfig) -> Self {
        self.quadrature = q;
        self
    }

    pub fn with_override(mut self, param: Param, value: f64) -> Self {
        self.fixed_overrides.insert(param, value);
        self
    }

    /// Parameters of the family paired with the prior kind that governs each.
    pub fn parameters(&self) -> Vec<(Param, ParamKind)> {
        let (distance, angle) = match (self.family, self.population) {
            (Family::M1, _) => (ParamKind::DistanceM1, ParamKind::AngleM2),
            (_, Population::Resident) => (ParamKind::DistanceM2, ParamKind::AngleM2),
            (_, Population::NonResident) => (ParamKind::DistanceNonRes, ParamKind::AngleNonRes),
        };
        match self.family {
            Family::M1 => vec![(Param::Distance, distance)],
            Family::M2 => vec![
                (Param::Distance, distance),
                (Param::RadialSpread, ParamKind::SpreadRadial),
            ],
            Family::NonRes => vec![
                (Param::Distance, distance),
                (Param::RadialSpread, ParamKind::SpreadRadial),
                (Param::Angle, angle),
                (Param::AngularSpread, ParamKind::SpreadAngular),
            ],
        }
    }

    fn validate(&self) -> Result<()> {
        let q = &self.quadrature;
        if q.distance_nodes == 0 || q.angle_nodes == 0 || q.spread_nodes == 0 {
            return Err(Error::Parameter("quadrature node counts must be >= 1".into()));
        }
        for (param, kind) in self.parameters() {
            if let Some(v) = self.fixed_overrides.get(&param) {
                let (lo, hi) = kind.support();
                if !(v.is_finite() && *v >= lo && *v <= hi) {
                    return Err(Error::Parameter(format!(
                        "override {param:?} = {v} outside [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Quadrature nodes for one parameter (each with weight `1/len`).
    fn nodes(&self, param: Param, kind: ParamKind, priors: &PriorSet) -> Result<Vec<f64>> {
        if let Some(v) = self.fixed_overrides.get(&param) {
            return Ok(vec![*v]);
        }
        let prior: &ParamPrior = priors.get(kind)?;
        let floor = match param {
            // α = 0 is outside every family's parameter space
            Param::Distance => 1e-6,
            _ => 0.0,
        };
        let mut nodes = prior.quantile_nodes(self.quadrature.nodes_for(param));
        for v in nodes.iter_mut() {
            *v = v.max(floor);
            if param == Param::Angle && *v >= 2.0 * std::f64::consts::PI {
                *v = 2.0 * std::f64::consts::PI - 1e-12;
            }
        }
        Ok(nodes)
    }
}

/// Per-node constants of a radial (distance × spread) node set.
struct RadialNodes {
    alpha: Vec<f64>,
    inv_two_var: Vec<f64>,
    log_norm: Vec<f64>,
    log_weight: f64,
}

impl RadialNodes {
    fn new(alphas: &[f64], sigmas: &[f64], normalizer: impl Fn(f64, f64) -> f64) -> Self {
        let mut alpha = Vec::new();
        let mut inv_two_var = Vec::new();
        let mut log_norm = Vec::new();
        for &a in alphas {
            for &s in sigmas {
                alpha.push(a);
                inv_two_var.push(1.0 / (2.0 * s * s));
                log_norm.push(normalizer(a, s).ln());
            }
        }
        let log_weight = -((alphas.len() * sigmas.len()) as f64).ln();
        Self {
            alpha,
            inv_two_var,
            log_norm,
            log_weight,
        }
    }

    /// log Σ_j w_j Π_i exp(-(v_i − c_j)²/(2s_j²)) / N_j for values with
    /// count `n_norm` normalizers, `n` data values of mean `mean` and
    /// centred sum of squares `ss`.
    fn log_marginal(&self, n_norm: f64, n: f64, mean: f64, ss: f64) -> f64 {
        let mut terms = Vec::with_capacity(self.alpha.len());
        for j in 0..self.alpha.len() {
            let d = mean - self.alpha[j];
            let sq = if n > 0.0 { ss + n * d * d } else { 0.0 };
            terms.push(-n_norm * self.log_norm[j] - sq * self.inv_two_var[j]);
        }
        self.log_weight + log_sum_exp(&terms)
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn mean_and_ss(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss)
}

/// Cell log-marginal-likelihood evaluator for one model.
enum CellModel {
    M1 { alphas: Vec<f64> },
    M2 { radial: RadialNodes },
    NonRes { radial: RadialNodes, angular: RadialNodes },
}

impl CellModel {
    fn build(spec: &ModelSpec, priors: &PriorSet) -> Result<Self> {
        spec.validate()?;
        let params = spec.parameters();
        let mut nodes = BTreeMap::new();
        for (param, kind) in &params {
            nodes.insert(*param, spec.nodes(*param, *kind, priors)?);
        }
        Ok(match spec.family {
            Family::M1 => CellModel::M1 {
                alphas: nodes.remove(&Param::Distance).unwrap(),
            },
            Family::M2 => CellModel::M2 {
                radial: RadialNodes::new(
                    &nodes[&Param::Distance],
                    &nodes[&Param::RadialSpread],
                    crate::likelihood::ring_normal_normalizer,
                ),
            },
            Family::NonRes => CellModel::NonRes {
                radial: RadialNodes::new(
                    &nodes[&Param::Distance],
                    &nodes[&Param::RadialSpread],
                    radial_normalizer,
                ),
                angular: RadialNodes::new(&nodes[&Param::Angle], &nodes[&Param::AngularSpread], angular_normalizer),
            },
        })
    }

    fn log_marginal(&self, sites: &[UtmPoint], z: &UtmPoint) -> f64 {
        let n = sites.len() as f64;
        match self {
            CellModel::M1 { alphas } => {
                let r2: f64 = sites
                    .iter()
                    .map(|x| {
                        let (dx, dy) = x.offset_from(z);
                        dx * dx + dy * dy
                    })
                    .sum();
                let terms: Vec<f64> = alphas
                    .iter()
                    .map(|a| {
                        let four_a2 = 4.0 * a * a;
                        -n * four_a2.ln() - std::f64::consts::PI * r2 / four_a2
                    })
                    .collect();
                -(alphas.len() as f64).ln() + log_sum_exp(&terms)
            }
            CellModel::M2 { radial } => {
                let radii: Vec<f64> = sites.iter().map(|x| x.distance(z)).collect();
                let (mean, ss) = mean_and_ss(&radii);
                radial.log_marginal(n, n, mean, ss)
            }
            CellModel::NonRes { radial, angular } => {
                let mut radii = Vec::with_capacity(sites.len());
                let mut angles = Vec::with_capacity(sites.len());
                for x in sites {
                    let (dx, dy) = x.offset_from(z);
                    let r = dx.hypot(dy);
                    if r <= COINCIDENT_KM {
                        // placed at a tiny radius in the preferred direction,
                        // so the angular factor is exactly 1
                        radii.push(COINCIDENT_RADIUS_KM);
                    } else {
                        radii.push(r);
                        angles.push(arg_angle(dx, dy).expect("nonzero offset"));
                    }
                }
                let (rm, rss) = mean_and_ss(&radii);
                let (am, ass) = mean_and_ss(&angles);
                radial.log_marginal(n, n, rm, rss) + angular.log_marginal(n, angles.len() as f64, am, ass)
            }
        }
    }
}

/// How cells are evaluated. Both modes produce bit-identical surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Sequential,
    Parallel,
}

/// Posterior from an arbitrary per-cell log-likelihood. Cells with zero
/// anchor-prior mass get zero posterior mass.
pub fn posterior_from_log_likelihood<F>(
    anchor: &AnchorPrior,
    mode: EvalMode,
    cell_log_likelihood: F,
) -> Result<PosteriorSurface>
where
    F: Fn(&UtmPoint) -> f64 + Sync,
{
    let grid = *anchor.grid();
    let centers = grid.centers();
    let eval = |(z, h): (&UtmPoint, &f64)| -> f64 {
        if *h <= 0.0 {
            f64::NEG_INFINITY
        } else {
            h.ln() + cell_log_likelihood(z)
        }
    };
    let log_mass: Vec<f64> = match mode {
        EvalMode::Sequential => centers.iter().zip(&anchor.surface.mass).map(eval).collect(),
        EvalMode::Parallel => centers
            .par_iter()
            .zip(anchor.surface.mass.par_iter())
            .map(eval)
            .collect(),
    };
    PosteriorSurface::from_log_weights(grid, log_mass)
}

pub fn posterior_surface_with_mode(
    sites: &[UtmPoint],
    spec: &ModelSpec,
    priors: &PriorSet,
    mode: EvalMode,
) -> Result<PosteriorSurface> {
    if sites.is_empty() {
        return Err(Error::InsufficientData(
            "posterior needs at least one crime site".into(),
        ));
    }
    let model = CellModel::build(spec, priors)?;
    posterior_from_log_likelihood(&priors.anchor, mode, |z| model.log_marginal(sites, z))
}

/// Marginal posterior of the anchor for `series` under `spec`, on the grid
/// of the anchor prior.
pub fn posterior_surface(
    series: &CrimeSeries,
    spec: &ModelSpec,
    priors: &PriorSet,
    grid: &Grid,
) -> Result<PosteriorSurface> {
    if priors.anchor.grid() != grid {
        return Err(Error::GridMismatch);
    }
    posterior_surface_with_mode(&series.sites, spec, priors, EvalMode::Parallel)
}

/// Cellwise convex combination `Σ w_k · surface_k`.
pub fn multimodel_combine(surfaces: &[&PosteriorSurface], weights: &[f64]) -> Result<PosteriorSurface> {
    if surfaces.is_empty() {
        return Err(Error::Weights("at least one surface is required".into()));
    }
    if surfaces.len() != weights.len() {
        return Err(Error::Weights(format!(
            "{} surfaces but {} weights",
            surfaces.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Weights("weights must be finite and >= 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Weights(format!("weights sum to {total}, not 1")));
    }
    let grid = surfaces[0].grid;
    if surfaces.iter().any(|s| s.grid != grid || s.mass.len() != grid.len()) {
        return Err(Error::GridMismatch);
    }
    let mut mass: Vec<f64> = surfaces[0].mass.iter().map(|m| weights[0] * m).collect();
    for (s, w) in surfaces.iter().zip(weights).skip(1) {
        for (acc, m) in mass.iter_mut().zip(&s.mass) {
            *acc += w * m;
        }
    }
    Ok(PosteriorSurface { grid, mass })
}

/// The seven compared methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodId {
    M1a,
    M1b,
    M2ai,
    M2aii,
    M2bi,
    M2bii,
    Rossmo,
}

impl MethodId {
    pub const ALL: [MethodId; 7] = [
        MethodId::M1a,
        MethodId::M1b,
        MethodId::M2ai,
        MethodId::M2aii,
        MethodId::M2bi,
        MethodId::M2bii,
        MethodId::Rossmo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::M1a => "1a",
            MethodId::M1b => "1b",
            MethodId::M2ai => "2ai",
            MethodId::M2aii => "2aii",
            MethodId::M2bi => "2bi",
            MethodId::M2bii => "2bii",
            MethodId::Rossmo => "ROSSMO",
        }
    }

    /// Buffer-zone residents use the ring-normal model (`A`) or the
    /// distance × angle model (`B`).
    pub fn variant(self) -> Option<Variant> {
        match self {
            MethodId::M1a | MethodId::M2ai | MethodId::M2aii => Some(Variant::A),
            MethodId::M1b | MethodId::M2bi | MethodId::M2bii => Some(Variant::B),
            MethodId::Rossmo => None,
        }
    }

    /// True for methods that mix in a non-resident surface.
    pub fn admits_non_residents(self) -> bool {
        matches!(
            self,
            MethodId::M2ai | MethodId::M2aii | MethodId::M2bi | MethodId::M2bii
        )
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .iter()
            .copied()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Input(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
}

/// Weights and quadrature shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub quadrature: QuadratureConfig,
    /// (resident, non-resident) weights for methods 2ai / 2bi.
    pub equal_weights: [f64; 2],
    /// (resident, non-resident) weights for methods 2aii / 2bii.
    pub frequency_weights: [f64; 2],
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            quadrature: QuadratureConfig::default(),
            equal_weights: [0.5, 0.5],
            frequency_weights: [10.0 / 11.0, 1.0 / 11.0],
        }
    }
}

impl EngineConfig {
    pub fn mixing_weights(&self, method: MethodId) -> Option<[f64; 2]> {
        match method {
            MethodId::M2ai | MethodId::M2bi => Some(self.equal_weights),
            MethodId::M2aii | MethodId::M2bii => Some(self.frequency_weights),
            _ => None,
        }
    }
}

/// Lazily computed component surfaces for one offender, shared between
/// methods so that e.g. 2ai and 2aii differ only in their weights.
pub struct MethodComponents<'a> {
    series: &'a CrimeSeries,
    label: &'a SubtypeLabel,
    priors: &'a PriorSet,
    config: &'a EngineConfig,
    cache: BTreeMap<String, PosteriorSurface>,
}

impl<'a> MethodComponents<'a> {
    pub fn new(
        series: &'a CrimeSeries,
        label: &'a SubtypeLabel,
        priors: &'a PriorSet,
        config: &'a EngineConfig,
    ) -> Self {
        Self {
            series,
            label,
            priors,
            config,
            cache: BTreeMap::new(),
        }
    }

    fn spec(&self, family: Family, population: Population) -> ModelSpec {
        ModelSpec::new(family, population).with_quadrature(self.config.quadrature)
    }

    fn component(&mut self, key: String, sites: &[UtmPoint], spec: ModelSpec) -> Result<PosteriorSurface> {
        if let Some(s) = self.cache.get(&key) {
            return Ok(s.clone());
        }
        let s = posterior_surface_with_mode(sites, &spec, self.priors, EvalMode::Parallel)?;
        self.cache.insert(key, s.clone());
        Ok(s)
    }

    /// Surface for the buffer-zone resident model over all sites.
    pub fn buffer_surface(&mut self, variant: Variant) -> Result<PosteriorSurface> {
        let sites = self.series.sites.clone();
        match variant {
            Variant::A => self.component("m2".into(), &sites, self.spec(Family::M2, Population::Resident)),
            Variant::B => self.component(
                "nonres-resident".into(),
                &sites,
                self.spec(Family::NonRes, Population::Resident),
            ),
        }
    }

    pub fn no_buffer_surface(&mut self, indices: Option<&[usize]>) -> Result<PosteriorSurface> {
        let (key, sites) = match indices {
            None => ("m1".to_string(), self.series.sites.clone()),
            Some(idx) => (
                format!("m1-{idx:?}"),
                idx.iter().map(|&i| self.series.sites[i]).collect::<Vec<_>>(),
            ),
        };
        self.component(key, &sites, self.spec(Family::M1, Population::Resident))
    }

    pub fn non_resident_surface(&mut self) -> Result<PosteriorSurface> {
        let sites = self.series.sites.clone();
        self.component(
            "nonres".into(),
            &sites,
            self.spec(Family::NonRes, Population::NonResident),
        )
    }

    /// One no-buffer surface per cluster plus one buffer surface over all
    /// sites, mixed with `cluster_weights` (uniform when `None`).
    pub fn m3_surface(&mut self, variant: Variant, cluster_weights: Option<&[f64]>) -> Result<PosteriorSurface> {
        if self.label.kind != Subtype::M3 || self.label.clusters.is_empty() {
            return Err(Error::Input("M3 surface needs a clustered subtype label".into()));
        }
        for c in &self.label.clusters {
            if c.is_empty() || c.iter().any(|&i| i >= self.series.n()) {
                return Err(Error::Input(format!("cluster {c:?} does not index the series")));
            }
        }
        let clusters = self.label.clusters.clone();
        let mut parts = Vec::with_capacity(clusters.len() + 1);
        for c in &clusters {
            parts.push(self.no_buffer_surface(Some(c))?);
        }
        parts.push(self.buffer_surface(variant)?);
        let r = parts.len();
        let uniform = vec![1.0 / r as f64; r];
        let weights = cluster_weights.unwrap_or(&uniform);
        let refs: Vec<&PosteriorSurface> = parts.iter().collect();
        multimodel_combine(&refs, weights)
    }

    pub fn resident_surface(&mut self, variant: Variant) -> Result<PosteriorSurface> {
        match self.label.kind {
            Subtype::M1 => self.no_buffer_surface(None),
            Subtype::M2 => self.buffer_surface(variant),
            Subtype::M3 => self.m3_surface(variant, None),
        }
    }

    pub fn method_surface(&mut self, method: MethodId) -> Result<PosteriorSurface> {
        let variant = method
            .variant()
            .ok_or_else(|| Error::Input("the Rossmo baseline is computed by the rossmo module".into()))?;
        let resident = self.resident_surface(variant)?;
        match self.config.mixing_weights(method) {
            None => Ok(resident),
            Some(w) => {
                let nonres = self.non_resident_surface()?;
                multimodel_combine(&[&resident, &nonres], &w)
            }
        }
    }
}

/// Posterior for an `M3` offender with explicit cluster weights.
pub fn m3_surface(
    series: &CrimeSeries,
    label: &SubtypeLabel,
    priors: &PriorSet,
    variant: Variant,
    config: &EngineConfig,
    cluster_weights: Option<&[f64]>,
) -> Result<PosteriorSurface> {
    MethodComponents::new(series, label, priors, config).m3_surface(variant, cluster_weights)
}

/// Surface of one Bayesian method for one offender.
pub fn run_method(
    series: &CrimeSeries,
    method: MethodId,
    label: &SubtypeLabel,
    priors: &PriorSet,
    config: &EngineConfig,
) -> Result<PosteriorSurface> {
    MethodComponents::new(series, label, priors, config).method_surface(method)
}
