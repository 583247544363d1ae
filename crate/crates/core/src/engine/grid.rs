//! Background grid for particle/grid transfers.

use crate::linalg::Vec3;
use crate::scalar::Real;

use super::collider::TerrainCollider;

/// Dense node lattice, x-major (`(i * ny + j) * nz + k`). After a transfer
/// `momentum` holds node momentum; after the grid update it holds velocity.
#[derive(Debug, Clone)]
pub struct MpmGrid<T: Real> {
    pub spacing: T,
    pub origin: Vec3<T>,
    pub dims: [usize; 3],
    pub mass: Vec<T>,
    pub momentum: Vec<Vec3<T>>,
    /// Terrain height and unit normal under each node column.
    pub(crate) column_surface: Vec<(T, Vec3<T>)>,
    /// Inclusive node range touched by the last transfer.
    pub(crate) active: Option<([usize; 3], [usize; 3])>,
}

impl<T: Real> MpmGrid<T> {
    pub fn new(origin: Vec3<T>, spacing: T, dims: [usize; 3], terrain: Option<&TerrainCollider<T>>) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        let mut column_surface = Vec::with_capacity(dims[0] * dims[1]);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                let x = origin.x + T::count(i) * spacing;
                let y = origin.y + T::count(j) * spacing;
                column_surface.push(match terrain {
                    Some(t) => {
                        let (h, gx, gy) = t.grid.sample_clamped(x, y);
                        let nz = T::one() / (T::one() + gx * gx + gy * gy).sqrt();
                        (h, Vec3::new(-gx * nz, -gy * nz, nz))
                    }
                    None => (T::neg_infinity(), Vec3::new(T::zero(), T::zero(), T::one())),
                });
            }
        }
        Self {
            spacing,
            origin,
            dims,
            mass: vec![T::zero(); n],
            momentum: vec![Vec3::zero(); n],
            column_surface,
            active: None,
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        self.origin + Vec3::new(T::count(i), T::count(j), T::count(k)) * self.spacing
    }

    pub fn node_count(&self) -> usize {
        self.mass.len()
    }

    pub fn total_mass(&self) -> T {
        self.mass.iter().copied().sum()
    }

    pub fn upper_corner(&self) -> Vec3<T> {
        self.node_position(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    pub(crate) fn clear_active(&mut self) {
        if let Some((lo, hi)) = self.active.take() {
            for i in lo[0]..=hi[0] {
                for j in lo[1]..=hi[1] {
                    let start = self.index(i, j, lo[2]);
                    let end = self.index(i, j, hi[2]) + 1;
                    self.mass[start..end].fill(T::zero());
                    self.momentum[start..end].fill(Vec3::zero());
                }
            }
        }
    }
}

/// Quadratic B-spline stencil of one point: base node and per-axis weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil<T: Real> {
    pub base: [usize; 3],
    /// Position relative to the base node, in cells.
    pub frac: Vec3<T>,
    pub w: [[T; 3]; 3],
}

impl<T: Real> Stencil<T> {
    /// `rel` is the position in grid units, assumed at least 0.5 cell from
    /// the lattice edge.
    #[inline]
    pub fn new(rel: Vec3<T>) -> Self {
        let half = T::lit(0.5);
        let mut base = [0usize; 3];
        let mut frac = Vec3::zero();
        let mut w = [[T::zero(); 3]; 3];
        for d in 0..3 {
            let b = (rel[d] - half).floor();
            base[d] = b.to_usize().unwrap_or(0);
            let fx = rel[d] - T::count(base[d]);
            frac[d] = fx;
            let a = T::lit(1.5) - fx;
            let c = fx - T::one();
            let e = fx - half;
            w[d] = [half * a * a, T::lit(0.75) - c * c, half * e * e];
        }
        Self { base, frac, w }
    }
}
