//! Seeding of the initial debris mass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::scalar::Real;

use super::state::{Boulder, SimulationState};

/// Simple polygon in world coordinates (meters), implicitly closed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Polygon(pub Vec<[f64; 2]>);

impl Polygon {
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn area(&self) -> f64 {
        let n = self.0.len();
        let mut s = 0.0;
        for i in 0..n {
            let a = self.0[i];
            let b = self.0[(i + 1) % n];
            s += a[0] * b[1] - b[0] * a[1];
        }
        (s * 0.5).abs()
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let pts = &self.0;
        let mut inside = false;
        let mut j = pts.len().wrapping_sub(1);
        for i in 0..pts.len() {
            let (xi, yi) = (pts[i][0], pts[i][1]);
            let (xj, yj) = (pts[j][0], pts[j][1]);
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.0 {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}

impl<T: Real> SimulationState<T> {
    /// Seed `volume` m³ of fluid as a uniform column stack over `region`,
    /// then place the configured boulders inside it.
    ///
    /// Columns sit on a square lattice of spacing `dx / ppc^(1/3)`; the
    /// vertical spacing is stretched so every particle carries the same
    /// volume and the total matches `volume` up to rounding.
    pub fn init_release(&mut self, region: &Polygon, volume: T, particles_per_cell: usize) -> Result<()> {
        if !(volume > T::zero()) || !volume.is_finite() {
            return Err(Error::Domain(format!("release volume must be positive, got {volume}")));
        }
        if particles_per_cell == 0 {
            return Err(Error::Domain("particles_per_cell must be at least 1".into()));
        }
        if region.0.len() < 3 || region.area() <= 1e-12 {
            return Err(Error::Domain("release region has zero area".into()));
        }
        let g = self.terrain.geometry;
        for p in &region.0 {
            if !g.contains(T::lit(p[0]), T::lit(p[1])) {
                return Err(Error::Domain(format!("release region vertex ({}, {}) outside terrain", p[0], p[1])));
            }
        }
        let dx = self.spacing().as_f64();
        let s = dx / (particles_per_cell as f64).cbrt();
        let (lo, hi) = region.bounds();
        let nx = ((hi[0] - lo[0]) / s).floor() as usize;
        let ny = ((hi[1] - lo[1]) / s).floor() as usize;
        let pad_x = (hi[0] - lo[0] - nx as f64 * s) * 0.5;
        let pad_y = (hi[1] - lo[1] - ny as f64 * s) * 0.5;
        let mut columns = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let x = lo[0] + pad_x + (i as f64 + 0.5) * s;
                let y = lo[1] + pad_y + (j as f64 + 0.5) * s;
                if region.contains(x, y) {
                    columns.push((x, y));
                }
            }
        }
        if columns.is_empty() {
            return Err(Error::Domain(format!("release region smaller than the particle spacing {s} m")));
        }
        let volume_f = volume.as_f64();
        let depth = volume_f / (columns.len() as f64 * s * s);
        let layers = ((depth / s).round() as usize).max(1);
        let dz = depth / layers as f64;
        let per_particle = T::lit(volume_f / (columns.len() * layers) as f64);
        for &(x, y) in &columns {
            let base = self.terrain.sample_clamped(T::lit(x), T::lit(y)).0.as_f64();
            for k in 0..layers {
                let z = base + (k as f64 + 0.5) * dz;
                self.add_particle(Vec3::from_f64([x, y, z]), Vec3::zero(), per_particle);
            }
        }

        let seeding = self.params.boulders;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < seeding.count && attempts < 10_000 {
            attempts += 1;
            let x = rng.gen_range(lo[0]..=hi[0]);
            let y = rng.gen_range(lo[1]..=hi[1]);
            let t: f64 = rng.gen();
            if !region.contains(x, y) {
                continue;
            }
            let r = seeding.radius_min + (seeding.radius_max - seeding.radius_min) * T::lit(t);
            let ground = self.terrain.sample_clamped(T::lit(x), T::lit(y)).0;
            let center = Vec3::new(T::lit(x), T::lit(y), ground + r);
            self.add_boulder(Boulder::new(center, r, seeding.density));
            placed += 1;
        }
        Ok(())
    }
}
