//! Debris-flow simulation and steering workbench.
//!
//! The numeric modules are generic over [`Real`] (f32 or f64); the aliases
//! below fix the scalar for the two common lanes.

// `!(x >= 0.0)` style checks are there to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod fixtures;
pub mod linalg;
pub mod physicalize;
pub mod raster;
pub mod risk;
pub mod scalar;
pub mod scenario;
pub mod session;
pub mod terrain;

pub use error::{Error, Result};
pub use scalar::Real;

pub type TerrainGridF64 = terrain::TerrainGrid<f64>;
pub type TerrainGridF32 = terrain::TerrainGrid<f32>;
pub type SimulationStateF64 = engine::SimulationState<f64>;
pub type SimulationStateF32 = engine::SimulationState<f32>;
pub type BarrierF64 = engine::Barrier<f64>;
