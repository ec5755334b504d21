//! Anchor-point estimation for serial offenders.
//!
//! Crime sites are projected to UTM kilometres, each offender is assigned a
//! resident subtype from the geometry of their crime sites, and a marginal
//! posterior over a grid of candidate anchor cells is computed under one of
//! several distance-decay likelihoods. Priors come from the remaining
//! offenders of the dataset (leave-one-out). Methods are compared with a
//! Rossmo hit-score baseline by the share of the grid searched before the
//! true anchor's cell is reached.

pub mod classifier;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geodesy;
pub mod grid;
pub mod likelihood;
pub mod posterior;
pub mod priors;
pub mod rossmo;
pub mod synthetic;

pub use error::{Error, Result};
pub use geodesy::{GeoPoint, UtmPoint};
pub use grid::{Grid, PosteriorSurface};
pub use posterior::MethodId;
