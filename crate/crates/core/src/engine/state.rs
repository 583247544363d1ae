//! Simulation state and the MLS-MPM time step.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;
use crate::terrain::TerrainGrid;

use super::collider::{Barrier, Building, ColliderSet, OrientedBox, TerrainCollider};
use super::grid::{MpmGrid, Stencil};
use super::params::{SimParams, CFL_LIMIT, PENETRATION_TOL_FACTOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FluidParticle<T: Real> {
    pub position: Vec3<T>,
    pub velocity: Vec3<T>,
    /// Affine velocity field carried between transfers.
    pub affine: Mat3<T>,
    pub mass: T,
    /// Rest volume.
    pub volume: T,
    /// Current-to-rest volume ratio.
    pub volume_ratio: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Boulder<T: Real> {
    pub center: Vec3<T>,
    pub radius: T,
    pub velocity: Vec3<T>,
    pub mass: T,
}

impl<T: Real> Boulder<T> {
    pub fn new(center: Vec3<T>, radius: T, density: T) -> Self {
        let mass = density * sphere_volume(radius);
        Self { center, radius, velocity: Vec3::zero(), mass }
    }
}

pub(crate) fn sphere_volume<T: Real>(r: T) -> T {
    T::lit(4.0 / 3.0) * T::PI() * r * r * r
}

#[derive(Debug, Clone)]
pub struct SimulationState<T: Real> {
    pub time: T,
    pub step_index: u64,
    pub particles: Vec<FluidParticle<T>>,
    pub boulders: Vec<Boulder<T>>,
    pub grid: MpmGrid<T>,
    pub colliders: ColliderSet<T>,
    pub terrain: Arc<TerrainGrid<T>>,
    pub seed: u64,
    pub params: SimParams<T>,
    scratch: Vec<FluidParticle<T>>,
}

impl<T: Real> SimulationState<T> {
    pub fn new(terrain: impl Into<Arc<TerrainGrid<T>>>, params: SimParams<T>, seed: u64) -> Result<Self> {
        Self::build(terrain.into(), params, seed, true)
    }

    /// State whose grid spans the terrain footprint but with no terrain collider.
    pub fn new_free_space(terrain: impl Into<Arc<TerrainGrid<T>>>, params: SimParams<T>, seed: u64) -> Result<Self> {
        Self::build(terrain.into(), params, seed, false)
    }

    fn build(terrain: Arc<TerrainGrid<T>>, params: SimParams<T>, seed: u64, collide_terrain: bool) -> Result<Self> {
        params.validate()?;
        let g = terrain.geometry;
        let dx = params.grid_spacing.unwrap_or(g.cell_size);
        let below = T::lit(3.0) * dx;
        let origin = Vec3::new(g.origin_x, g.origin_y, terrain.min_height() - below);
        let cells = |len: T| (len / dx).ceil().to_usize().unwrap_or(0) + 1;
        let relief = terrain.max_height() - origin.z;
        let dims = [cells(g.width()).max(5), cells(g.height()).max(5), cells(relief) + params.headroom_cells.max(2)];
        let collider = collide_terrain.then(|| TerrainCollider { grid: terrain.clone() });
        let grid = MpmGrid::new(origin, dx, dims, collider.as_ref());
        Ok(Self {
            time: T::zero(),
            step_index: 0,
            particles: Vec::new(),
            boulders: Vec::new(),
            grid,
            colliders: ColliderSet { terrain: collider, buildings: Vec::new(), barriers: Vec::new() },
            terrain,
            seed,
            params,
            scratch: Vec::new(),
        })
    }

    #[inline]
    pub fn spacing(&self) -> T {
        self.grid.spacing
    }

    pub fn penetration_tol(&self) -> T {
        T::lit(PENETRATION_TOL_FACTOR) * self.spacing()
    }

    pub fn add_particle(&mut self, position: Vec3<T>, velocity: Vec3<T>, volume: T) {
        self.particles.push(FluidParticle {
            position,
            velocity,
            affine: Mat3::zero(),
            mass: self.params.rho * volume,
            volume,
            volume_ratio: T::one(),
        });
    }

    pub fn add_boulder(&mut self, boulder: Boulder<T>) {
        self.boulders.push(boulder);
    }

    pub fn add_building(&mut self, building: Building<T>) {
        self.colliders.buildings.push(building);
    }

    pub fn barrier(&self, id: &str) -> Option<&Barrier<T>> {
        self.colliders.barrier(id)
    }

    pub fn barriers(&self) -> impl Iterator<Item = &Barrier<T>> {
        self.colliders.barriers.iter().map(|(b, _)| b)
    }

    /// Insert or replace a barrier. Fluid and boulders left inside the new
    /// volume are pushed out along the collider normal.
    pub fn upsert_barrier(&mut self, barrier: Barrier<T>) -> Result<()> {
        barrier.validate()?;
        let collider = barrier.collider();
        match self.colliders.barriers.iter_mut().find(|(b, _)| b.id == barrier.id) {
            Some(slot) => {
                if slot.0.same_geometry(&barrier) {
                    slot.0 = barrier;
                    return Ok(());
                }
                *slot = (barrier, collider.clone());
            }
            None => self.colliders.barriers.push((barrier, collider.clone())),
        }
        self.evict_from(&collider);
        Ok(())
    }

    pub fn remove_barrier(&mut self, id: &str) -> Result<Barrier<T>> {
        let pos = self
            .colliders
            .barriers
            .iter()
            .position(|(b, _)| b.id == id)
            .ok_or_else(|| Error::UnknownBarrier(id.to_string()))?;
        Ok(self.colliders.barriers.remove(pos).0)
    }

    fn evict_from(&mut self, collider: &OrientedBox<T>) {
        let terrain = self.colliders.terrain.clone();
        let mut particles = std::mem::take(&mut self.particles);
        for p in &mut particles {
            let (phi, n) = collider.signed_distance(p.position);
            if phi < T::zero() {
                p.position += n * (-phi);
                let vn = p.velocity.dot(n);
                if vn < T::zero() {
                    p.velocity -= n * vn;
                }
                // a large box can push material past the lattice edge
                self.clamp_to_domain(&mut p.position);
                if let Some(t) = &terrain {
                    let s = t.surface(p.position.x, p.position.y);
                    if p.position.z < s {
                        p.position.z = s;
                    }
                }
                self.clamp_to_domain(&mut p.position);
            }
        }
        self.particles = particles;
        let mut boulders = std::mem::take(&mut self.boulders);
        for b in &mut boulders {
            let (phi, n) = collider.signed_distance(b.center);
            if phi < b.radius {
                b.center += n * (b.radius - phi);
                self.clamp_to_domain(&mut b.center);
            }
        }
        self.boulders = boulders;
    }

    pub fn total_fluid_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass.as_f64()).sum()
    }

    pub fn total_fluid_volume(&self) -> f64 {
        self.particles.iter().map(|p| p.volume.as_f64()).sum()
    }

    pub fn total_momentum(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for p in &self.particles {
            let v = p.velocity.to_f64();
            for k in 0..3 {
                m[k] += p.mass.as_f64() * v[k];
            }
        }
        for b in &self.boulders {
            let v = b.velocity.to_f64();
            for k in 0..3 {
                m[k] += b.mass.as_f64() * v[k];
            }
        }
        m
    }

    pub fn max_speed(&self) -> T {
        let fluid = self.particles.iter().map(|p| p.velocity.norm()).fold(T::zero(), T::max);
        self.boulders.iter().map(|b| b.velocity.norm()).fold(fluid, T::max)
    }

    /// Minimum signed distance of any particle or boulder surface to any collider.
    pub fn min_clearance(&self) -> Option<T> {
        let mut best: Option<T> = None;
        let mut take = |d: T| best = Some(best.map_or(d, |b: T| b.min(d)));
        for p in &self.particles {
            if let Some((d, _)) = self.colliders.signed_distance(p.position) {
                take(d);
            }
        }
        for b in &self.boulders {
            if let Some((d, _)) = self.colliders.signed_distance(b.center) {
                take(d - b.radius);
            }
        }
        best
    }

    /// SHA-256 over every evolving quantity, hex encoded.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |v: T| h.update(v.hash_bits().to_le_bytes());
        put(self.time);
        for p in &self.particles {
            for v in [p.position, p.velocity] {
                put(v.x);
                put(v.y);
                put(v.z);
            }
            for r in p.affine.rows {
                put(r.x);
                put(r.y);
                put(r.z);
            }
            put(p.mass);
            put(p.volume);
            put(p.volume_ratio);
        }
        for b in &self.boulders {
            for v in [b.center, b.velocity] {
                put(v.x);
                put(v.y);
                put(v.z);
            }
            put(b.radius);
            put(b.mass);
        }
        for b in self.barriers() {
            for v in [b.center.x, b.center.y, b.center.z, b.yaw, b.height, b.width, b.thickness, b.face_angle, b.alpha]
            {
                put(v);
            }
        }
        h.update(self.step_index.to_le_bytes());
        h.update(self.seed.to_le_bytes());
        for b in self.barriers() {
            h.update(b.id.as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Advance by one time step.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.params.dt;
        let dx = self.grid.spacing;
        let speed = self.max_speed();
        if speed * dt > T::lit(CFL_LIMIT) * dx {
            return Err(Error::Cfl { speed: speed.as_f64(), dt: dt.as_f64(), spacing: dx.as_f64() });
        }
        if self.particles.is_empty() && self.boulders.is_empty() {
            self.advance_clock();
            return Ok(());
        }
        self.grid.clear_active();
        self.mark_active();
        self.particle_to_grid();
        self.update_grid();
        let boulders = self.update_boulders()?;
        self.grid_to_particle()?;
        std::mem::swap(&mut self.particles, &mut self.scratch);
        self.boulders = boulders;
        self.advance_clock();
        Ok(())
    }

    fn advance_clock(&mut self) {
        self.step_index += 1;
        self.time = T::lit(self.step_index as f64) * self.params.dt;
    }

    #[inline]
    fn grid_coords(&self, p: Vec3<T>) -> Vec3<T> {
        (p - self.grid.origin) * (T::one() / self.grid.spacing)
    }

    fn mark_active(&mut self) {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let points = self.particles.iter().map(|p| p.position).chain(self.boulders.iter().map(|b| b.center));
        for p in points {
            let st = Stencil::new(self.grid_coords(p));
            for d in 0..3 {
                lo[d] = lo[d].min(st.base[d]);
                hi[d] = hi[d].max(st.base[d] + 2);
            }
        }
        for (h, n) in hi.iter_mut().zip(self.grid.dims) {
            *h = (*h).min(n - 1);
        }
        self.grid.active = Some((lo, hi));
    }

    fn particle_to_grid(&mut self) {
        let dt = self.params.dt;
        let dx = self.grid.spacing;
        let inv_dx = T::one() / dx;
        let four_inv_dx2 = T::lit(4.0) * inv_dx * inv_dx;
        let k = self.params.eos_stiffness;
        let gamma = self.params.eos_gamma;
        let dims = self.grid.dims;
        let origin = self.grid.origin;
        let mass = &mut self.grid.mass;
        let momentum = &mut self.grid.momentum;
        for p in &self.particles {
            let st = Stencil::new((p.position - origin) * inv_dx);
            let j = p.volume_ratio;
            let pressure = (k * (j.recip().powi(gamma) - T::one())).max(T::zero());
            let iso = dt * p.volume * j * pressure * four_inv_dx2;
            let mc = p.affine.scale(p.mass);
            let mv = p.velocity * p.mass;
            for a in 0..3 {
                let dxa = (T::count(a) - st.frac.x) * dx;
                let wa = st.w[0][a];
                for b in 0..3 {
                    let dyb = (T::count(b) - st.frac.y) * dx;
                    let wab = wa * st.w[1][b];
                    let row = ((st.base[0] + a) * dims[1] + st.base[1] + b) * dims[2] + st.base[2];
                    for c in 0..3 {
                        let dzc = (T::count(c) - st.frac.z) * dx;
                        let w = wab * st.w[2][c];
                        let dpos = Vec3::new(dxa, dyb, dzc);
                        let idx = row + c;
                        mass[idx] += w * p.mass;
                        momentum[idx] += (mv + mc.mul_vec(dpos) + dpos * iso) * w;
                    }
                }
            }
        }
    }

    fn update_grid(&mut self) {
        let Some((lo, hi)) = self.grid.active else { return };
        let dt = self.params.dt;
        let gdt = self.params.gravity * dt;
        let mu = self.params.friction;
        let dims = self.grid.dims;
        let margin = self.grid.spacing;
        let boxes: Vec<&OrientedBox<T>> = self.colliders.boxes().collect();
        let grid = &mut self.grid;
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                let (surface, normal) = grid.column_surface[i * dims[1] + j];
                for k in lo[2]..=hi[2] {
                    let idx = grid.index(i, j, k);
                    let m = grid.mass[idx];
                    if m <= T::zero() {
                        continue;
                    }
                    let mut v = grid.momentum[idx] * (T::one() / m) + gdt;
                    let pos = grid.node_position(i, j, k);
                    let phi = (pos.z - surface) * normal.z;
                    if phi < T::zero() {
                        v = project_velocity(v, normal, mu);
                    }
                    for bx in &boxes {
                        if bx.near(pos, margin) {
                            let (d, n) = bx.signed_distance(pos);
                            if d < T::zero() {
                                v = project_velocity(v, n, mu);
                            }
                        }
                    }
                    let idx3 = [i, j, k];
                    for d in 0..3 {
                        if idx3[d] < 2 && v[d] < T::zero() {
                            v[d] = T::zero();
                        }
                        if idx3[d] + 2 >= dims[d] && v[d] > T::zero() {
                            v[d] = T::zero();
                        }
                    }
                    grid.momentum[idx] = v;
                }
            }
        }
    }

    fn update_boulders(&mut self) -> Result<Vec<Boulder<T>>> {
        let dt = self.params.dt;
        let dx = self.grid.spacing;
        let inv_dx = T::one() / dx;
        let rho = self.params.rho;
        let g = self.params.gravity;
        let mu = self.params.friction;
        let mut out = Vec::with_capacity(self.boulders.len());
        for (index, b) in self.boulders.iter().enumerate() {
            let st = Stencil::new(self.grid_coords(b.center));
            let mut u = Vec3::zero();
            let mut wsum = T::zero();
            let mut wm = T::zero();
            self.for_stencil(&st, |grid, idx, w| {
                let m = grid.mass[idx];
                if m > T::zero() {
                    u += grid.momentum[idx] * w;
                    wsum += w;
                    wm += w * m;
                }
            });
            let fluid_density = wm * inv_dx * inv_dx * inv_dx;
            let submerged = (fluid_density / rho).min(T::one()).max(T::zero());
            let u = if wsum > T::zero() { u * (T::one() / wsum) } else { Vec3::zero() };
            let displaced = submerged * rho * sphere_volume(b.radius);

            let mut v = b.velocity + g * dt - g * (dt * displaced / b.mass);
            // penalty contact, stiffness scaled to stay stable at this dt
            let k_pen = T::lit(0.2) / (dt * dt);
            let c_pen = T::lit(0.5) / dt;
            for (phi, n) in self.collider_distances(b.center) {
                let pen = phi - b.radius;
                if pen < T::zero() {
                    let vn = v.dot(n).min(T::zero());
                    v += n * ((-pen * k_pen - vn * c_pen) * dt);
                }
            }
            let rate = self.params.drag_coefficient * displaced / b.mass;
            let v_new = (v + u * (rate * dt)) * (T::one() / (T::one() + rate * dt));
            let impulse = (u - v_new) * (b.mass * rate * dt);
            if wm > T::zero() && rate > T::zero() {
                let scale = T::one() / wm;
                let grid = &mut self.grid;
                for_stencil_mut(grid, &st, |grid, idx, w| {
                    let m = grid.mass[idx];
                    if m > T::zero() {
                        grid.momentum[idx] -= impulse * (w * scale);
                    }
                });
            }
            let mut next = Boulder { center: b.center + v_new * dt, velocity: v_new, ..*b };
            self.clamp_to_domain(&mut next.center);
            for _ in 0..3 {
                let mut moved = false;
                for (phi, n) in self.collider_distances(next.center) {
                    let gap = phi - next.radius;
                    if gap < T::zero() {
                        next.center += n * (-gap);
                        next.velocity = project_velocity(next.velocity, n, mu);
                        moved = true;
                    }
                }
                if !moved {
                    break;
                }
            }
            if !next.center.is_finite() || !next.velocity.is_finite() {
                return Err(Error::NonFinite { kind: "boulder", index });
            }
            out.push(next);
        }
        Ok(out)
    }

    fn collider_distances(&self, p: Vec3<T>) -> Vec<(T, Vec3<T>)> {
        let mut out = Vec::new();
        if let Some(t) = &self.colliders.terrain {
            out.push(t.signed_distance(p));
        }
        for bx in self.colliders.boxes() {
            out.push(bx.signed_distance(p));
        }
        out
    }

    fn for_stencil(&self, st: &Stencil<T>, mut f: impl FnMut(&MpmGrid<T>, usize, T)) {
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let w = st.w[0][a] * st.w[1][b] * st.w[2][c];
                    let idx = self.grid.index(st.base[0] + a, st.base[1] + b, st.base[2] + c);
                    f(&self.grid, idx, w);
                }
            }
        }
    }

    #[inline]
    fn clamp_to_domain(&self, p: &mut Vec3<T>) {
        let lo = self.grid.origin + Vec3::splat(self.grid.spacing * T::lit(1.0001));
        let hi = self.grid.upper_corner() - Vec3::splat(self.grid.spacing * T::lit(1.0001));
        for d in 0..3 {
            p[d] = p[d].max(lo[d]).min(hi[d]);
        }
    }

    fn grid_to_particle(&mut self) -> Result<()> {
        let dt = self.params.dt;
        let dx = self.grid.spacing;
        let inv_dx = T::one() / dx;
        let four_inv_dx2 = T::lit(4.0) * inv_dx * inv_dx;
        let min_j = self.params.min_volume_ratio;
        let mu = self.params.friction;
        let margin = self.grid.spacing;
        let boxes: Vec<&OrientedBox<T>> = self.colliders.boxes().collect();
        let terrain = self.colliders.terrain.as_ref();
        let dims = self.grid.dims;
        let lo = self.grid.origin + Vec3::splat(dx * T::lit(1.0001));
        let hi = self.grid.upper_corner() - Vec3::splat(dx * T::lit(1.0001));
        let grid_v = &self.grid.momentum;
        let origin = self.grid.origin;

        self.scratch.clear();
        self.scratch.reserve(self.particles.len());
        for (index, p) in self.particles.iter().enumerate() {
            let st = Stencil::new((p.position - origin) * inv_dx);
            let mut v = Vec3::zero();
            let mut bmat = Mat3::zero();
            for a in 0..3 {
                let dxa = (T::count(a) - st.frac.x) * dx;
                let wa = st.w[0][a];
                for b in 0..3 {
                    let dyb = (T::count(b) - st.frac.y) * dx;
                    let wab = wa * st.w[1][b];
                    let row = ((st.base[0] + a) * dims[1] + st.base[1] + b) * dims[2] + st.base[2];
                    for c in 0..3 {
                        let dzc = (T::count(c) - st.frac.z) * dx;
                        let w = wab * st.w[2][c];
                        let vi = grid_v[row + c] * w;
                        v += vi;
                        bmat += vi.outer(Vec3::new(dxa, dyb, dzc));
                    }
                }
            }
            let affine = bmat.scale(four_inv_dx2);
            let volume_ratio = (p.volume_ratio * (T::one() + dt * affine.trace())).max(min_j).min(T::one());
            let mut x = p.position + v * dt;
            for d in 0..3 {
                x[d] = x[d].max(lo[d]).min(hi[d]);
            }
            for _ in 0..3 {
                let mut moved = false;
                for bx in &boxes {
                    if bx.near(x, margin) {
                        let (phi, n) = bx.signed_distance(x);
                        if phi < T::zero() {
                            x += n * (-phi);
                            v = project_velocity(v, n, mu);
                            moved = true;
                        }
                    }
                }
                if let Some(t) = terrain {
                    let (phi, n) = t.signed_distance(x);
                    if phi < T::zero() {
                        x.z = t.surface(x.x, x.y);
                        v = project_velocity(v, n, mu);
                    }
                }
                if !moved {
                    break;
                }
            }
            let next = FluidParticle { position: x, velocity: v, affine, volume_ratio, ..*p };
            if !next.position.is_finite() || !next.velocity.is_finite() || !next.affine.is_finite() {
                return Err(Error::NonFinite { kind: "particle", index });
            }
            self.scratch.push(next);
        }
        Ok(())
    }
}

fn for_stencil_mut<T: Real>(grid: &mut MpmGrid<T>, st: &Stencil<T>, mut f: impl FnMut(&mut MpmGrid<T>, usize, T)) {
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                let w = st.w[0][a] * st.w[1][b] * st.w[2][c];
                let idx = grid.index(st.base[0] + a, st.base[1] + b, st.base[2] + c);
                f(grid, idx, w);
            }
        }
    }
}

/// Remove the inward normal component and apply Coulomb friction to the rest.
#[inline]
pub(crate) fn project_velocity<T: Real>(v: Vec3<T>, n: Vec3<T>, mu: T) -> Vec3<T> {
    let vn = v.dot(n);
    if vn >= T::zero() {
        return v;
    }
    let vt = v - n * vn;
    let vt_len = vt.norm();
    if vt_len <= T::zero() {
        return Vec3::zero();
    }
    let keep = (T::one() + mu * vn / vt_len).max(T::zero());
    vt * keep
}
