//! Jurisdiction grid and grid-aligned probability surfaces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{UtmPoint, JURISDICTION_ZONE};

/// Rectangle in UTM km split into `nrows × ncols` equal cells. Row 0 is the
/// southernmost row, column 0 the westernmost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub west: f64,
    pub east: f64,
    pub south: f64,
    pub north: f64,
    pub ncols: usize,
    pub nrows: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            west: 300.0,
            east: 400.0,
            south: 4330.0,
            north: 4400.0,
            ncols: 100,
            nrows: 70,
        }
    }
}

impl Grid {
    pub fn new(west: f64, east: f64, south: f64, north: f64, ncols: usize, nrows: usize) -> Result<Self> {
        let g = Self {
            west,
            east,
            south,
            north,
            ncols,
            nrows,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.west, self.east, self.south, self.north]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.east <= self.west || self.north <= self.south {
            return Err(Error::Input(format!("invalid grid bounds {self:?}")));
        }
        if self.ncols == 0 || self.nrows == 0 {
            return Err(Error::Input("grid must have at least one cell".into()));
        }
        Ok(())
    }

    pub fn cell_width(&self) -> f64 {
        (self.east - self.west) / self.ncols as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.north - self.south) / self.nrows as f64
    }

    pub fn len(&self) -> usize {
        self.nrows * self.ncols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, p: &UtmPoint) -> bool {
        p.easting >= self.west && p.easting <= self.east && p.northing >= self.south && p.northing <= self.north
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Result<UtmPoint> {
        if row >= self.nrows || col >= self.ncols {
            return Err(Error::CellIndex {
                row,
                col,
                nrows: self.nrows,
                ncols: self.ncols,
            });
        }
        Ok(self.center_unchecked(row, col))
    }

    #[inline]
    pub(crate) fn center_unchecked(&self, row: usize, col: usize) -> UtmPoint {
        UtmPoint::new(
            JURISDICTION_ZONE,
            self.west + (col as f64 + 0.5) * self.cell_width(),
            self.south + (row as f64 + 0.5) * self.cell_height(),
        )
    }

    /// All cell centres in row-major order.
    pub fn centers(&self) -> Vec<UtmPoint> {
        (0..self.nrows)
            .flat_map(|r| (0..self.ncols).map(move |c| (r, c)))
            .map(|(r, c)| self.center_unchecked(r, c))
            .collect()
    }

    /// Half-open containment; points on the east or north edge belong to the
    /// last column or row.
    pub fn locate_cell(&self, p: &UtmPoint) -> Result<(usize, usize)> {
        if !self.contains(p) {
            return Err(Error::OutOfGrid {
                easting: p.easting,
                northing: p.northing,
            });
        }
        let col = (((p.easting - self.west) / self.cell_width()).floor() as usize).min(self.ncols - 1);
        let row = (((p.northing - self.south) / self.cell_height()).floor() as usize).min(self.nrows - 1);
        Ok((row, col))
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }
}

/// Normalized probability mass over grid cells, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSurface {
    pub grid: Grid,
    pub mass: Vec<f64>,
}

impl PosteriorSurface {
    /// Normalize nonnegative weights to sum 1. The sum is taken in
    /// row-major order.
    pub fn from_weights(grid: Grid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Input("surface weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateSurface);
        }
        Ok(Self {
            grid,
            mass: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Normalize from per-cell log weights (−∞ allowed) via a global max shift.
    pub fn from_log_weights(grid: Grid, log_weights: Vec<f64>) -> Result<Self> {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::DegenerateSurface);
        }
        Self::from_weights(grid, log_weights.into_iter().map(|l| (l - max).exp()).collect())
    }

    pub fn uniform(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            grid,
            mass: vec![1.0 / n as f64; n],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.mass[self.grid.index(row, col)]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, m) in self.mass.iter().enumerate() {
            if *m > self.mass[best] {
                best = i;
            }
        }
        (best / self.grid.ncols, best % self.grid.ncols)
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }
}
