//! Run configuration: a flat `key = value` text file, overridable from the
//! command line.
//!
//! ```text
//! # comments start with '#'
//! dataset = offenders.csv
//! grid = 100x70
//! bounds = 300,400,4330,4400
//! methods = 1a,1b,ROSSMO
//! scope = residents
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::classifier::ClassifierConfig;
use crate::error::{Error, Result};
use crate::evaluation::{EvaluationConfig, Scope};
use crate::grid::Grid;
use crate::posterior::{EngineConfig, MethodId, QuadratureConfig};

const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub grid: Grid,
    pub methods: Vec<MethodId>,
    pub scope: Scope,
    pub quadrature: QuadratureConfig,
    pub classifier: ClassifierConfig,
    /// (resident, non-resident) weights for 2ai / 2bi.
    pub equal_weights: [f64; 2],
    /// (resident, non-resident) weights for 2aii / 2bii.
    pub frequency_weights: [f64; 2],
    /// Overrides the scope's default thresholds when set.
    pub thresholds: Option<Vec<f64>>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let engine = EngineConfig::default();
        Self {
            dataset: None,
            grid: Grid::default(),
            methods: MethodId::ALL.to_vec(),
            scope: Scope::All,
            quadrature: engine.quadrature,
            classifier: ClassifierConfig::default(),
            equal_weights: engine.equal_weights,
            frequency_weights: engine.frequency_weights,
            thresholds: None,
            out_dir: PathBuf::from("out"),
            seed: 42,
        }
    }
}

fn bad(key: &str, value: &str, why: &str) -> Error {
    Error::Config(format!("{key} = {value}: {why}"))
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value, "not a number"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

/// `WxH`, i.e. columns × rows.
pub fn parse_grid_size(value: &str) -> Result<(usize, usize)> {
    let (w, h) = value
        .trim()
        .split_once(['x', 'X'])
        .ok_or_else(|| bad("grid", value, "expected WxH"))?;
    Ok((parse_num("grid", w)?, parse_num("grid", h)?))
}

/// `W,E,S,N` in UTM km.
pub fn parse_bounds(value: &str) -> Result<[f64; 4]> {
    let v: Vec<f64> = parse_list("bounds", value)?;
    v.try_into().map_err(|_| bad("bounds", value, "expected W,E,S,N"))
}

pub fn parse_methods(value: &str) -> Result<Vec<MethodId>> {
    let methods = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(MethodId::from_str)
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(bad("methods", value, "empty method list"));
    }
    Ok(methods)
}

fn parse_pair(key: &str, value: &str) -> Result<[f64; 2]> {
    let v: Vec<f64> = parse_list(key, value)?;
    v.try_into()
        .map_err(|_| bad(key, value, "expected two comma-separated weights"))
}

impl RunConfig {
    /// Parse config text on top of the defaults. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" | "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse_num(key, value)?,
            "grid" => {
                let (w, h) = parse_grid_size(value)?;
                self.grid.ncols = w;
                self.grid.nrows = h;
            }
            "bounds" => {
                let [w, e, s, n] = parse_bounds(value)?;
                self.grid.west = w;
                self.grid.east = e;
                self.grid.south = s;
                self.grid.north = n;
            }
            "methods" => self.methods = parse_methods(value)?,
            "scope" => self.scope = value.parse()?,
            "distance_nodes" => self.quadrature.distance_nodes = parse_num(key, value)?,
            "angle_nodes" => self.quadrature.angle_nodes = parse_num(key, value)?,
            "spread_nodes" => self.quadrature.spread_nodes = parse_num(key, value)?,
            "cutoff_km" => self.classifier.cutoff_km = parse_num(key, value)?,
            "m1_coverage" => self.classifier.m1_coverage = parse_num(key, value)?,
            "m3_coverage" => self.classifier.m3_coverage = parse_num(key, value)?,
            "equal_weights" => self.equal_weights = parse_pair(key, value)?,
            "frequency_weights" => self.frequency_weights = parse_pair(key, value)?,
            "thresholds" => self.thresholds = Some(parse_list(key, value)?),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        for (name, w) in [
            ("equal_weights", self.equal_weights),
            ("frequency_weights", self.frequency_weights),
        ] {
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || ((w[0] + w[1]) - 1.0).abs() > WEIGHT_TOLERANCE {
                return Err(Error::Weights(format!("{name} {w:?} must be nonnegative and sum to 1")));
            }
        }
        let q = self.quadrature;
        if q.distance_nodes == 0 || q.angle_nodes == 0 || q.spread_nodes == 0 {
            return Err(Error::Config("quadrature node counts must be positive".into()));
        }
        let c = self.classifier;
        if !(c.cutoff_km > 0.0) || !(0.0..=1.0).contains(&c.m1_coverage) || !(0.0..=1.0).contains(&c.m3_coverage) {
            return Err(Error::Config(format!("invalid classifier thresholds {c:?}")));
        }
        if let Some(t) = &self.thresholds {
            if t.is_empty() || t.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Config("thresholds must be fractions in [0, 1]".into()));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        Ok(())
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            quadrature: self.quadrature,
            equal_weights: self.equal_weights,
            frequency_weights: self.frequency_weights,
        }
    }

    pub fn evaluation(&self) -> EvaluationConfig {
        EvaluationConfig {
            grid: self.grid,
            engine: self.engine(),
            classifier: self.classifier,
            thresholds: self.thresholds.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.grid, Grid::default());
        assert_eq!(c.methods.len(), 7);
    }

    #[test]
    fn parses_every_key() {
        let text = "\
# sample
dataset = data/x.csv
out = results
seed = 7
grid = 50x35
bounds = 300, 400, 4330, 4400
methods = 1a, ROSSMO
scope = residents
distance_nodes = 16
angle_nodes = 12
spread_nodes = 4
cutoff_km = 1.5   # trailing comment
m1_coverage = 0.75
m3_coverage = 0.5
equal_weights = 0.5, 0.5
frequency_weights = 0.9, 0.1
thresholds = 0.01, 0.5
";
        let c = RunConfig::parse(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.dataset.as_deref(), Some(Path::new("data/x.csv")));
        assert_eq!(c.out_dir, PathBuf::from("results"));
        assert_eq!(c.seed, 7);
        assert_eq!((c.grid.ncols, c.grid.nrows), (50, 35));
        assert_eq!(c.methods, vec![MethodId::M1a, MethodId::Rossmo]);
        assert_eq!(c.scope, Scope::ResidentsOnly);
        assert_eq!(
            c.quadrature,
            QuadratureConfig {
                distance_nodes: 16,
                angle_nodes: 12,
                spread_nodes: 4
            }
        );
        assert_eq!(c.classifier.cutoff_km, 1.5);
        assert_eq!(c.frequency_weights, [0.9, 0.1]);
        assert_eq!(c.thresholds, Some(vec![0.01, 0.5]));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("nonsense"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("colour = red"), Err(Error::Config(_))));
        assert!(RunConfig::parse("grid = 10by10").is_err());
        assert!(RunConfig::parse("bounds = 1,2,3").is_err());
        assert!(RunConfig::parse("methods = 3z").is_err());
        let c = RunConfig::parse("equal_weights = 0.5, 0.499").unwrap();
        assert!(matches!(c.validate(), Err(Error::Weights(_))));
        let c = RunConfig::parse("bounds = 400,300,4330,4400").unwrap();
        assert!(c.validate().is_err());
    }
}
