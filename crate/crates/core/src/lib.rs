//! Two-phase flow in fractured reservoirs and graph-network surrogates for it.
//!
//! The pipeline: [`dfn`] draws fracture networks, [`edfm`] embeds them in a
//! Cartesian grid, [`sim`] produces pressure/saturation trajectories, [`graph`]
//! turns grid + state into graphs, [`model`] holds the autoregressive and
//! recurrent surrogates built from [`nn`], [`training`] fits them in two
//! stages and [`eval`] scores rollouts.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod dfn;
pub mod edfm;
pub mod error;
pub mod eval;
pub mod graph;
pub mod jsonfmt;
pub mod model;
pub mod nn;
pub mod sim;
pub mod training;
pub mod units;
pub mod verify;

pub use error::{Error, Result};
