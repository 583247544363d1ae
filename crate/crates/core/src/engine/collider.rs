//! Signed-distance colliders: terrain heightfield, building boxes and barriers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;
use crate::terrain::TerrainGrid;

pub const DEFAULT_ALPHA: f64 = 2.5;

/// Rigid barrier placed across the flow. Local frame: +x points downstream
/// through the barrier, +y along its width, +z up. `center` is the middle of
/// the base; the barrier rises `height` above it and is buried the same
/// depth plus its thickness below it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Barrier<T: Real> {
    pub id: String,
    pub center: Vec3<T>,
    pub yaw: T,
    pub height: T,
    pub width: T,
    pub thickness: T,
    /// Tilt of the barrier about its width axis, radians from vertical.
    #[serde(default)]
    pub face_angle: T,
    /// Dynamic impact coefficient.
    #[serde(default = "default_alpha")]
    pub alpha: T,
}

fn default_alpha<T: Real>() -> T {
    T::lit(DEFAULT_ALPHA)
}

impl<T: Real> Barrier<T> {
    pub fn new(id: impl Into<String>, center: Vec3<T>, yaw: T, height: T, width: T, thickness: T) -> Self {
        Self { id: id.into(), center, yaw, height, width, thickness, face_angle: T::zero(), alpha: default_alpha() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: T, name: &str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!("barrier {}: {name} must be positive, got {v}", self.id)))
            }
        };
        positive(self.height, "height")?;
        positive(self.width, "width")?;
        positive(self.thickness, "thickness")?;
        positive(self.alpha, "alpha")?;
        if !self.center.is_finite() || !self.yaw.is_finite() || !self.face_angle.is_finite() {
            return Err(Error::Domain(format!("barrier {}: non-finite pose", self.id)));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Mat3<T> {
        Mat3::yaw_pitch(self.yaw, self.face_angle)
    }

    /// World point expressed in the barrier frame (origin at the base center).
    pub fn to_local(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation().transpose().mul_vec(p - self.center)
    }

    pub fn embed_depth(&self) -> T {
        self.height + self.thickness
    }

    pub fn collider(&self) -> OrientedBox<T> {
        let two = T::lit(2.0);
        let embed = self.embed_depth();
        let rot = self.rotation();
        let local_center = Vec3::new(T::zero(), T::zero(), (self.height - embed) / two);
        OrientedBox::new(
            self.center + rot.mul_vec(local_center),
            Vec3::new(self.thickness / two, self.width / two, (self.height + embed) / two),
            rot,
        )
    }

    pub fn cast<U: Real>(&self) -> Barrier<U> {
        Barrier {
            id: self.id.clone(),
            center: Vec3::from_f64(self.center.to_f64()),
            yaw: U::lit(self.yaw.as_f64()),
            height: U::lit(self.height.as_f64()),
            width: U::lit(self.width.as_f64()),
            thickness: U::lit(self.thickness.as_f64()),
            face_angle: U::lit(self.face_angle.as_f64()),
            alpha: U::lit(self.alpha.as_f64()),
        }
    }

    /// Same pose and dimensions, bit for bit.
    pub fn same_geometry(&self, other: &Self) -> bool {
        self.center == other.center
            && self.yaw == other.yaw
            && self.height == other.height
            && self.width == other.width
            && self.thickness == other.thickness
            && self.face_angle == other.face_angle
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox<T: Real> {
    pub center: Vec3<T>,
    pub half_extents: Vec3<T>,
    /// Local-to-world rotation.
    pub rotation: Mat3<T>,
    rotation_t: Mat3<T>,
    aabb_min: Vec3<T>,
    aabb_max: Vec3<T>,
}

impl<T: Real> OrientedBox<T> {
    pub fn new(center: Vec3<T>, half_extents: Vec3<T>, rotation: Mat3<T>) -> Self {
        let mut reach = Vec3::zero();
        for i in 0..3 {
            let r = rotation.rows[i];
            reach[i] = r.x.abs() * half_extents.x + r.y.abs() * half_extents.y + r.z.abs() * half_extents.z;
        }
        Self {
            center,
            half_extents,
            rotation,
            rotation_t: rotation.transpose(),
            aabb_min: center - reach,
            aabb_max: center + reach,
        }
    }

    pub fn axis_aligned(min: Vec3<T>, max: Vec3<T>) -> Self {
        let half = T::lit(0.5);
        Self::new((min + max) * half, (max - min) * half, Mat3::identity())
    }

    /// Whether `p` lies within `margin` of the world-space bounding box.
    #[inline]
    pub fn near(&self, p: Vec3<T>, margin: T) -> bool {
        p.x >= self.aabb_min.x - margin
            && p.y >= self.aabb_min.y - margin
            && p.z >= self.aabb_min.z - margin
            && p.x <= self.aabb_max.x + margin
            && p.y <= self.aabb_max.y + margin
            && p.z <= self.aabb_max.z + margin
    }

    /// Signed distance (negative inside) and outward unit normal.
    pub fn signed_distance(&self, p: Vec3<T>) -> (T, Vec3<T>) {
        let local = self.rotation_t.mul_vec(p - self.center);
        let q = Vec3::new(
            local.x.abs() - self.half_extents.x,
            local.y.abs() - self.half_extents.y,
            local.z.abs() - self.half_extents.z,
        );
        let outside = Vec3::new(q.x.max(T::zero()), q.y.max(T::zero()), q.z.max(T::zero()));
        let out_len = outside.norm();
        if out_len > T::zero() {
            let dir =
                Vec3::new(outside.x * local.x.signum(), outside.y * local.y.signum(), outside.z * local.z.signum())
                    * (T::one() / out_len);
            return (out_len, self.rotation.mul_vec(dir));
        }
        let mut axis = 0;
        for i in 1..3 {
            if q[i] > q[axis] {
                axis = i;
            }
        }
        let mut dir = Vec3::zero();
        dir[axis] = if local[axis] >= T::zero() { T::one() } else { -T::one() };
        (q[axis], self.rotation.mul_vec(dir))
    }
}

/// Heightfield collider. The distance is the vertical offset scaled by the
/// normal's vertical component, exact for planar patches.
#[derive(Debug, Clone)]
pub struct TerrainCollider<T: Real> {
    pub grid: Arc<TerrainGrid<T>>,
}

impl<T: Real> TerrainCollider<T> {
    #[inline]
    pub fn signed_distance(&self, p: Vec3<T>) -> (T, Vec3<T>) {
        let (h, gx, gy) = self.grid.sample_clamped(p.x, p.y);
        let nz = T::one() / (T::one() + gx * gx + gy * gy).sqrt();
        ((p.z - h) * nz, Vec3::new(-gx * nz, -gy * nz, nz))
    }

    #[inline]
    pub fn surface(&self, x: T, y: T) -> T {
        self.grid.sample_clamped(x, y).0
    }
}

#[derive(Debug, Clone)]
pub struct Building<T: Real> {
    pub footprint: Vec<[f64; 2]>,
    pub height: T,
    pub collider: OrientedBox<T>,
}

impl<T: Real> Building<T> {
    /// Extrude the footprint's bounding box from below the ground to `height`
    /// above the highest ground point under it.
    pub fn extrude(footprint: Vec<[f64; 2]>, height: T, terrain: &TerrainGrid<T>) -> Result<Self> {
        if footprint.len() < 3 {
            return Err(Error::Scenario("building footprint needs at least 3 vertices".into()));
        }
        if !(height > T::zero()) {
            return Err(Error::Scenario(format!("building height must be positive, got {height}")));
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &footprint {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let mut g_min = T::infinity();
        let mut g_max = T::neg_infinity();
        let samples = 4;
        for a in 0..=samples {
            for b in 0..=samples {
                let x = lo[0] + (hi[0] - lo[0]) * a as f64 / samples as f64;
                let y = lo[1] + (hi[1] - lo[1]) * b as f64 / samples as f64;
                let h = terrain.sample_clamped(T::lit(x), T::lit(y)).0;
                g_min = g_min.min(h);
                g_max = g_max.max(h);
            }
        }
        let embed = terrain.geometry.cell_size * T::lit(2.0);
        let collider = OrientedBox::axis_aligned(
            Vec3::new(T::lit(lo[0]), T::lit(lo[1]), g_min - embed),
            Vec3::new(T::lit(hi[0]), T::lit(hi[1]), g_max + height),
        );
        Ok(Self { footprint, height, collider })
    }
}

#[derive(Debug, Clone)]
pub struct ColliderSet<T: Real> {
    pub terrain: Option<TerrainCollider<T>>,
    pub buildings: Vec<Building<T>>,
    pub barriers: Vec<(Barrier<T>, OrientedBox<T>)>,
}

impl<T: Real> ColliderSet<T> {
    pub fn boxes(&self) -> impl Iterator<Item = &OrientedBox<T>> {
        self.buildings.iter().map(|b| &b.collider).chain(self.barriers.iter().map(|(_, c)| c))
    }

    pub fn barrier(&self, id: &str) -> Option<&Barrier<T>> {
        self.barriers.iter().find(|(b, _)| b.id == id).map(|(b, _)| b)
    }

    /// Smallest signed distance over every collider, with its normal.
    pub fn signed_distance(&self, p: Vec3<T>) -> Option<(T, Vec3<T>)> {
        let mut best: Option<(T, Vec3<T>)> = self.terrain.as_ref().map(|t| t.signed_distance(p));
        for b in self.boxes() {
            let d = b.signed_distance(p);
            if best.is_none_or(|(phi, _)| d.0 < phi) {
                best = Some(d);
            }
        }
        best
    }
}
