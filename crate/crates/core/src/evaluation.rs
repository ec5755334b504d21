//! Search-fraction evaluation and accumulation curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify, ground_truth_residency, ClassifierConfig, Residency, SubtypeLabel};
use crate::dataset::{CrimeSeries, Dataset};
use crate::error::{Error, Result};
use crate::geodesy::UtmPoint;
use crate::grid::{Grid, PosteriorSurface};
use crate::posterior::{EngineConfig, MethodComponents, MethodId};
use crate::priors::build_prior_set;
use crate::rossmo::{default_params, hit_score_surface};

pub const RESIDENT_THRESHOLDS: [f64; 12] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10, 0.16, 0.17];
pub const ALL_THRESHOLDS: [f64; 10] = [0.01, 0.05, 0.10, 0.15, 0.20, 0.25, 0.36, 0.37, 0.38, 0.39];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    ResidentsOnly,
    All,
}

impl Scope {
    pub fn default_thresholds(self) -> Vec<f64> {
        match self {
            Scope::ResidentsOnly => RESIDENT_THRESHOLDS.to_vec(),
            Scope::All => ALL_THRESHOLDS.to_vec(),
        }
    }
}

impl std::str::FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "residents" | "residents_only" | "residents-only" => Ok(Scope::ResidentsOnly),
            "all" => Ok(Scope::All),
            other => Err(Error::Input(format!("unknown scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub offender_id: String,
    pub method: MethodId,
    pub cells_examined: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulationCurve {
    pub method: MethodId,
    pub thresholds: Vec<f64>,
    pub found_fraction: Vec<f64>,
}

/// Cells by descending mass; ties keep row-major order.
pub fn rank_cells(s: &PosteriorSurface) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..s.mass.len()).collect();
    // stable sort keeps the row-major tie-break
    order.sort_by(|a, b| s.mass[*b].total_cmp(&s.mass[*a]));
    order
        .into_iter()
        .map(|i| (i / s.grid.ncols, i % s.grid.ncols))
        .collect()
}

/// 1-based rank position of the anchor's cell.
pub fn search_fraction(
    s: &PosteriorSurface,
    anchor: &UtmPoint,
    offender_id: &str,
    method: MethodId,
) -> Result<SearchResult> {
    let (row, col) = s.grid.locate_cell(anchor)?;
    let target = s.grid.index(row, col);
    let target_mass = s.mass[target];
    // Count cells that rank strictly ahead: higher mass, or equal mass and
    // earlier row-major index. Same order as rank_cells without sorting.
    let ahead = s
        .mass
        .iter()
        .enumerate()
        .filter(|(i, m)| match m.total_cmp(&target_mass) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Equal => *i < target,
            std::cmp::Ordering::Less => false,
        })
        .count();
    let cells_examined = ahead + 1;
    Ok(SearchResult {
        offender_id: offender_id.to_string(),
        method,
        cells_examined,
        fraction: cells_examined as f64 / s.grid.len() as f64,
    })
}

/// Share of results found within each threshold fraction of the area.
pub fn accumulation_curve(method: MethodId, results: &[SearchResult], thresholds: &[f64]) -> Result<AccumulationCurve> {
    if results.is_empty() {
        return Err(Error::Input("accumulation curve needs at least one result".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::Input(format!("threshold {t} outside (0, 1]")));
    }
    let n = results.len() as f64;
    let found_fraction = thresholds
        .iter()
        .map(|t| {
            // tolerate representation error in tabulated percentages
            results.iter().filter(|r| r.fraction <= t + 1e-12).count() as f64 / n
        })
        .collect();
    Ok(AccumulationCurve {
        method,
        thresholds: thresholds.to_vec(),
        found_fraction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub offender_id: String,
    pub method: MethodId,
    pub subtype: String,
    pub cells_examined: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub offender_id: String,
    pub method: Option<MethodId>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scope: Scope,
    pub methods: Vec<MethodId>,
    pub rows: Vec<ResultRow>,
    pub curves: Vec<AccumulationCurve>,
    pub failures: Vec<FailureRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationConfig {
    pub grid: Grid,
    pub engine: EngineConfig,
    pub classifier: ClassifierConfig,
    pub thresholds: Option<Vec<f64>>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            engine: EngineConfig::default(),
            classifier: ClassifierConfig::default(),
            thresholds: None,
        }
    }
}

/// Subtype labels for every series, from crime-site geometry alone.
pub fn label_dataset(ds: &Dataset, config: &ClassifierConfig) -> Result<BTreeMap<String, SubtypeLabel>> {
    ds.series
        .iter()
        .map(|s| Ok((s.offender_id.clone(), classify(&s.sites, config)?)))
        .collect()
}

/// Offenders evaluated under `scope`, in dataset order.
pub fn in_scope<'a>(ds: &'a Dataset, scope: Scope) -> Vec<&'a CrimeSeries> {
    ds.series
        .iter()
        .filter(|s| match scope {
            Scope::All => true,
            Scope::ResidentsOnly => ground_truth_residency(s) == Some(Residency::Resident),
        })
        .collect()
}

type OffenderOutcome = (Vec<ResultRow>, Vec<FailureRecord>);

fn evaluate_offender(
    ds: &Dataset,
    series: &CrimeSeries,
    methods: &[MethodId],
    labels: &BTreeMap<String, SubtypeLabel>,
    config: &EvaluationConfig,
) -> OffenderOutcome {
    let id = series.offender_id.clone();
    let fail = |method: Option<MethodId>, e: Error| FailureRecord {
        offender_id: id.clone(),
        method,
        message: e.to_string(),
    };
    let Some(anchor) = series.anchor else {
        return (
            Vec::new(),
            vec![fail(None, Error::Data("no ground-truth anchor".into()))],
        );
    };
    if !config.grid.contains(&anchor) {
        let e = Error::OutOfGrid {
            easting: anchor.easting,
            northing: anchor.northing,
        };
        return (Vec::new(), vec![fail(None, e)]);
    }
    let label = &labels[&id];
    let needs_priors = methods.iter().any(|m| *m != MethodId::Rossmo);
    let priors = if needs_priors {
        match build_prior_set(ds, &id, labels, &config.grid) {
            Ok(p) => Some(p),
            Err(e) => return (Vec::new(), vec![fail(None, e)]),
        }
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut components = priors
        .as_ref()
        .map(|p| MethodComponents::new(series, label, p, &config.engine));
    for &method in methods {
        let surface = if method == MethodId::Rossmo {
            default_params(series, &config.grid).and_then(|p| hit_score_surface(series, &config.grid, &p))
        } else {
            components.as_mut().expect("priors built").method_surface(method)
        };
        match surface.and_then(|s| search_fraction(&s, &anchor, &id, method)) {
            Ok(r) => rows.push(ResultRow {
                offender_id: id.clone(),
                method,
                subtype: label.kind.to_string(),
                cells_examined: r.cells_examined,
                fraction: r.fraction,
            }),
            Err(e) => failures.push(fail(Some(method), e)),
        }
    }
    (rows, failures)
}

/// Leave-one-out evaluation of `methods` over the offenders in `scope`.
pub fn compare_methods(
    ds: &Dataset,
    methods: &[MethodId],
    scope: Scope,
    config: &EvaluationConfig,
) -> Result<EvaluationReport> {
    if methods.is_empty() {
        return Err(Error::Input("no methods requested".into()));
    }
    let labels = label_dataset(ds, &config.classifier)?;
    let targets = in_scope(ds, scope);
    let outcomes: Vec<OffenderOutcome> = targets
        .par_iter()
        .map(|s| evaluate_offender(ds, s, methods, &labels, config))
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in outcomes {
        rows.extend(r);
        failures.extend(f);
    }
    for f in &failures {
        warn!("offender {}: {}", f.offender_id, f.message);
    }
    rows.sort_by(|a, b| a.offender_id.cmp(&b.offender_id).then(a.method.cmp(&b.method)));
    failures.sort_by(|a, b| a.offender_id.cmp(&b.offender_id).then(a.method.cmp(&b.method)));

    let thresholds = config.thresholds.clone().unwrap_or_else(|| scope.default_thresholds());
    let mut curves = Vec::new();
    for &m in methods {
        let results: Vec<SearchResult> = rows
            .iter()
            .filter(|r| r.method == m)
            .map(|r| SearchResult {
                offender_id: r.offender_id.clone(),
                method: m,
                cells_examined: r.cells_examined,
                fraction: r.fraction,
            })
            .collect();
        if results.is_empty() {
            continue;
        }
        curves.push(accumulation_curve(m, &results, &thresholds)?);
    }
    Ok(EvaluationReport {
        scope,
        methods: methods.to_vec(),
        rows,
        curves,
        failures,
    })
}

impl EvaluationReport {
    pub fn curve(&self, method: MethodId) -> Option<&AccumulationCurve> {
        self.curves.iter().find(|c| c.method == method)
    }

    pub fn write_results_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["offender_id", "method", "subtype", "cells_examined", "fraction"])?;
        for r in &self.rows {
            wtr.write_record([
                r.offender_id.clone(),
                r.method.to_string(),
                r.subtype.clone(),
                r.cells_examined.to_string(),
                format!("{:.6}", r.fraction),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_curves_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["method", "threshold", "found_fraction"])?;
        for c in &self.curves {
            for (t, f) in c.thresholds.iter().zip(&c.found_fraction) {
                wtr.write_record([c.method.to_string(), format!("{t:.4}"), format!("{f:.4}")])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Methods as rows, thresholds as columns.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.curves.first() else {
            return out;
        };
        let _ = write!(out, "{:<8}", "method");
        for t in &first.thresholds {
            let _ = write!(out, " {:>7}", format!("{:.0}%", t * 100.0));
        }
        out.push('\n');
        for c in &self.curves {
            let _ = write!(out, "{:<8}", c.method.as_str());
            for f in &c.found_fraction {
                let _ = write!(out, " {f:>7.4}");
            }
            out.push('\n');
        }
        out
    }
}
