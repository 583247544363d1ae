use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::scalar::Real;

pub const DEFAULT_RHO: f64 = 2000.0;
pub const DEFAULT_FRICTION: f64 = 0.3;
pub const DEFAULT_PARTICLES_PER_CELL: usize = 8;
pub const PENETRATION_TOL_FACTOR: f64 = 0.05;
pub const CFL_LIMIT: f64 = 0.4;

/// Boulder count and radius range; radii are drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BoulderSeeding<T: Real> {
    pub count: usize,
    pub radius_min: T,
    pub radius_max: T,
    pub density: T,
}

impl<T: Real> Default for BoulderSeeding<T> {
    fn default() -> Self {
        Self { count: 0, radius_min: T::lit(0.3), radius_max: T::lit(0.5), density: T::lit(2600.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default)]
pub struct SimParams<T: Real> {
    pub dt: T,
    pub gravity: Vec3<T>,
    /// Rest density of the flow, kg/m³.
    pub rho: T,
    /// Tait equation-of-state stiffness, Pa.
    pub eos_stiffness: T,
    pub eos_gamma: i32,
    /// Lower clamp on the volume ratio J.
    pub min_volume_ratio: T,
    /// Fluid-to-boulder drag rate, 1/s.
    pub drag_coefficient: T,
    /// Tangential Coulomb friction against colliders.
    pub friction: T,
    /// Background grid spacing; defaults to the terrain cell size.
    pub grid_spacing: Option<T>,
    /// Grid layers above the highest terrain point.
    pub headroom_cells: usize,
    pub particles_per_cell: usize,
    pub boulders: BoulderSeeding<T>,
}

impl<T: Real> Default for SimParams<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(2e-3),
            gravity: Vec3::new(T::zero(), T::zero(), T::lit(-9.81)),
            rho: T::lit(DEFAULT_RHO),
            eos_stiffness: T::lit(2.0e5),
            eos_gamma: 7,
            min_volume_ratio: T::lit(0.5),
            drag_coefficient: T::lit(4.0),
            friction: T::lit(DEFAULT_FRICTION),
            grid_spacing: None,
            headroom_cells: 10,
            particles_per_cell: DEFAULT_PARTICLES_PER_CELL,
            boulders: BoulderSeeding::default(),
        }
    }
}

impl<T: Real> SimParams<T> {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::Domain(what.to_string())) };
        check(self.dt > T::zero() && self.dt.is_finite(), "dt must be positive")?;
        check(self.gravity.is_finite(), "gravity must be finite")?;
        check(self.rho > T::zero(), "rho must be positive")?;
        check(self.eos_stiffness >= T::zero(), "EOS stiffness must be non-negative")?;
        check(self.eos_gamma >= 1, "EOS exponent must be at least 1")?;
        check(self.friction >= T::zero(), "friction must be non-negative")?;
        check(self.drag_coefficient >= T::zero(), "drag coefficient must be non-negative")?;
        check(self.particles_per_cell >= 1, "particles_per_cell must be at least 1")?;
        check(
            self.min_volume_ratio > T::zero() && self.min_volume_ratio <= T::one(),
            "min_volume_ratio must lie in (0, 1]",
        )?;
        if let Some(dx) = self.grid_spacing {
            check(dx > T::zero(), "grid spacing must be positive")?;
        }
        let b = &self.boulders;
        if b.count > 0 {
            check(
                b.radius_min > T::zero() && b.radius_max >= b.radius_min && b.density > T::zero(),
                "boulder radii and density must be positive",
            )?;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> SimParams<U> {
        let c = |v: T| U::lit(v.as_f64());
        SimParams {
            dt: c(self.dt),
            gravity: Vec3::new(c(self.gravity.x), c(self.gravity.y), c(self.gravity.z)),
            rho: c(self.rho),
            eos_stiffness: c(self.eos_stiffness),
            eos_gamma: self.eos_gamma,
            min_volume_ratio: c(self.min_volume_ratio),
            drag_coefficient: c(self.drag_coefficient),
            friction: c(self.friction),
            grid_spacing: self.grid_spacing.map(c),
            headroom_cells: self.headroom_cells,
            particles_per_cell: self.particles_per_cell,
            boulders: BoulderSeeding {
                count: self.boulders.count,
                radius_min: c(self.boulders.radius_min),
                radius_max: c(self.boulders.radius_max),
                density: c(self.boulders.density),
            },
        }
    }
}
