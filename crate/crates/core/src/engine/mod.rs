//! Particle/grid debris-flow solver: weakly compressible MLS-MPM fluid with
//! rigid boulders, colliding against terrain, buildings and barriers.

mod collider;
mod contact;
mod fields;
mod grid;
mod params;
mod release;
mod state;

pub use collider::{Barrier, Building, ColliderSet, OrientedBox, TerrainCollider, DEFAULT_ALPHA};
pub use contact::{BarrierContactLog, WET_DEPTH};
pub use grid::MpmGrid;
pub use params::{
    BoulderSeeding, SimParams, CFL_LIMIT, DEFAULT_FRICTION, DEFAULT_PARTICLES_PER_CELL, DEFAULT_RHO,
    PENETRATION_TOL_FACTOR,
};
pub use release::Polygon;
pub use state::{Boulder, FluidParticle, SimulationState};
