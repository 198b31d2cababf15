//! Terrain dataset curation: orthoimage/DEM repair, verticalisation,
//! tiling, leakage-free splitting, statistics and prediction evaluation.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod patching;
pub mod pipeline;
pub mod raster;
pub mod repair;
pub mod rng;
pub mod split;
pub mod stats;
pub mod synth;
pub mod verticalize;

pub use error::{Error, Result};
