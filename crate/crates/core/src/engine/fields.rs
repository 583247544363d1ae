//! Column-integrated flow rasters on the terrain lattice.

use crate::raster::Raster;
use crate::scalar::Real;

use super::state::SimulationState;

impl<T: Real> SimulationState<T> {
    /// Flow depth per terrain cell: particle rest volume in the column over the cell area.
    pub fn depth_field(&self) -> Raster<T> {
        let g = self.terrain.geometry;
        let mut out = Raster::filled(g, T::zero());
        for p in &self.particles {
            if let Some((c, r)) = g.cell_of(p.position.x, p.position.y) {
                out.values[g.index(c, r)] += p.volume;
            }
        }
        let inv_area = T::one() / g.cell_area();
        for v in &mut out.values {
            *v *= inv_area;
        }
        out
    }

    /// Volume-weighted mean horizontal speed per column; dry cells are zero.
    pub fn velocity_field(&self) -> Raster<T> {
        let g = self.terrain.geometry;
        let mut weighted = vec![T::zero(); g.len()];
        let mut volume = vec![T::zero(); g.len()];
        for p in &self.particles {
            if let Some((c, r)) = g.cell_of(p.position.x, p.position.y) {
                let i = g.index(c, r);
                weighted[i] += p.volume * p.velocity.horizontal_norm();
                volume[i] += p.volume;
            }
        }
        let values =
            weighted.into_iter().zip(volume).map(|(w, v)| if v > T::zero() { w / v } else { T::zero() }).collect();
        Raster { geometry: g, values }
    }
}
