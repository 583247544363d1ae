//! Printable terrain solids: exaggeration, hollowing with pillars, tiling and
//! binary STL. Mesh coordinates are millimetres with the base plane at z = 0.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::terrain::TerrainGrid;

pub const DEFAULT_Z_SCALE: f64 = 1.5;

/// Heights multiplied by `z_scale`.
pub fn exaggerate<T: Real>(grid: &TerrainGrid<T>, z_scale: T) -> Result<TerrainGrid<T>> {
    if !(z_scale > T::zero()) || !z_scale.is_finite() {
        return Err(Error::Domain(format!("z scale must be positive, got {z_scale}")));
    }
    let mut out = grid.clone();
    for h in &mut out.heights {
        *h *= z_scale;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FabricationConfig {
    pub z_scale: f64,
    /// Model metres per world metre.
    pub xy_scale: f64,
    pub base_thickness_mm: f64,
    /// Hollow out the interior, leaving walls `shell_mm` thick.
    pub hollow: bool,
    pub shell_mm: f64,
    pub pillar_pitch_mm: f64,
    /// Zero disables pillars.
    pub pillar_radius_mm: f64,
    pub rows: usize,
    pub cols: usize,
    pub envelope_mm: [f64; 3],
}

impl Default for FabricationConfig {
    fn default() -> Self {
        Self {
            z_scale: DEFAULT_Z_SCALE,
            xy_scale: 1.0 / 1000.0,
            base_thickness_mm: 5.0,
            hollow: true,
            shell_mm: 2.0,
            pillar_pitch_mm: 20.0,
            pillar_radius_mm: 2.0,
            rows: 1,
            cols: 1,
            envelope_mm: [250.0, 210.0, 210.0],
        }
    }
}

impl FabricationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Fabrication(m));
        for (v, n) in [
            (self.z_scale, "z_scale"),
            (self.xy_scale, "xy_scale"),
            (self.base_thickness_mm, "base_thickness_mm"),
            (self.pillar_pitch_mm, "pillar_pitch_mm"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{n} must be positive, got {v}"));
            }
        }
        if self.hollow && !(self.shell_mm > 0.0) {
            return bad(format!("shell_mm must be positive, got {}", self.shell_mm));
        }
        if !(self.pillar_radius_mm >= 0.0) || 2.0 * self.pillar_radius_mm >= self.pillar_pitch_mm {
            return bad("pillar radius must be non-negative and below half the pitch".into());
        }
        if self.rows == 0 || self.cols == 0 {
            return bad("rows and cols must be at least 1".into());
        }
        if self.envelope_mm.iter().any(|&e| !(e > 0.0)) {
            return bad("printer envelope must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolidMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Counter-clockwise seen from outside.
    pub triangles: Vec<[u32; 3]>,
    /// Triangles belonging to the terrain surface.
    pub top: Range<usize>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl SolidMesh {
    fn vertex(&mut self, p: [f64; 3]) -> u32 {
        self.vertices.push(p);
        (self.vertices.len() - 1) as u32
    }

    fn tri(&mut self, a: u32, b: u32, c: u32) {
        self.triangles.push([a, b, c]);
    }

    /// Quad `a b c d` counter-clockwise from outside.
    fn quad(&mut self, a: u32, b: u32, c: u32, d: u32) {
        self.tri(a, b, c);
        self.tri(a, c, d);
    }

    fn corners(&self, t: [u32; 3]) -> [[f64; 3]; 3] {
        t.map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: [u32; 3]) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&t| {
                let [a, b, c] = self.corners(t);
                let k = cross(b, c);
                (a[0] * k[0] + a[1] * k[1] + a[2] * k[2]) / 6.0
            })
            .sum()
    }

    /// Every directed edge is matched by exactly one reverse edge.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(u32, u32), i32> = HashMap::with_capacity(self.triangles.len() * 3);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                if a == b {
                    return false;
                }
                *edges.entry((a, b)).or_default() += 1;
            }
        }
        edges.iter().all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
    }

    pub fn has_degenerate(&self, eps: f64) -> bool {
        self.triangles.iter().any(|&t| self.triangle_area(t) <= eps)
    }

    pub fn top_area(&self) -> f64 {
        self.triangles[self.top.clone()].iter().map(|&t| self.triangle_area(t)).sum()
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Watertight, outward facing and free of zero-area triangles.
    pub fn check(&self) -> Result<()> {
        if !self.is_watertight() {
            return Err(Error::Fabrication("mesh is not watertight".into()));
        }
        if self.has_degenerate(1e-12) {
            return Err(Error::Fabrication("mesh has degenerate triangles".into()));
        }
        if !(self.signed_volume() > 0.0) {
            return Err(Error::Fabrication("mesh is inside out".into()));
        }
        Ok(())
    }
}

/// Node range `[start, end]` of the terrain lattice covered by one tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TileSpan {
    cols: (usize, usize),
    rows: (usize, usize),
}

struct Lattice<'a> {
    grid: &'a TerrainGrid<f64>,
    cfg: &'a FabricationConfig,
    mm: f64,
    z_min: f64,
}

impl Lattice<'_> {
    fn xy(&self, col: usize, row: usize) -> (f64, f64) {
        let cs = self.grid.geometry.cell_size;
        (col as f64 * cs * self.mm, row as f64 * cs * self.mm)
    }

    fn top_z(&self, col: usize, row: usize) -> f64 {
        let h = self.grid.height(col, row) * self.cfg.z_scale;
        self.cfg.base_thickness_mm + (h - self.z_min) * self.mm
    }
}

/// Closed solid over the full terrain.
pub fn solidify(grid: &TerrainGrid<f64>, cfg: &FabricationConfig) -> Result<SolidMesh> {
    let c = FabricationConfig { rows: 1, cols: 1, ..cfg.clone() };
    Ok(tile(grid, &c)?.remove(0))
}

/// `cfg.rows × cfg.cols` solids sharing global coordinates, row-major from the south-west.
pub fn tile(grid: &TerrainGrid<f64>, cfg: &FabricationConfig) -> Result<Vec<SolidMesh>> {
    cfg.validate()?;
    let g = grid.geometry;
    let (qx, qy) = (g.n_cols - 1, g.n_rows - 1);
    if cfg.cols > qx || cfg.rows > qy {
        return Err(Error::Fabrication(format!(
            "{}x{} tiles need at least that many cell quads, grid has {qy}x{qx}",
            cfg.rows, cfg.cols
        )));
    }
    let z_min = grid.min_height() * cfg.z_scale;
    let lattice = Lattice { grid, cfg, mm: cfg.xy_scale * 1000.0, z_min };
    let cut = |k: usize, parts: usize, quads: usize| (k * quads + parts / 2) / parts;
    let mut out = Vec::with_capacity(cfg.rows * cfg.cols);
    for r in 0..cfg.rows {
        for c in 0..cfg.cols {
            let span = TileSpan {
                cols: (cut(c, cfg.cols, qx), cut(c + 1, cfg.cols, qx)),
                rows: (cut(r, cfg.rows, qy), cut(r + 1, cfg.rows, qy)),
            };
            let mesh = build_tile(&lattice, span)?;
            let (lo, hi) = mesh.bounds();
            for k in 0..3 {
                if hi[k] - lo[k] > cfg.envelope_mm[k] + 1e-9 {
                    return Err(Error::Fabrication(format!(
                        "tile ({r}, {c}) is {:.1} mm along axis {k}, envelope is {} mm",
                        hi[k] - lo[k],
                        cfg.envelope_mm[k]
                    )));
                }
            }
            out.push(mesh);
        }
    }
    Ok(out)
}

fn build_tile(l: &Lattice, span: TileSpan) -> Result<SolidMesh> {
    let (c0, c1) = span.cols;
    let (r0, r1) = span.rows;
    let (nx, ny) = (c1 - c0 + 1, r1 - r0 + 1);
    let mut m = SolidMesh::default();

    let mut top = Vec::with_capacity(nx * ny);
    let mut min_top = f64::INFINITY;
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = l.xy(c0 + i, r0 + j);
            let z = l.top_z(c0 + i, r0 + j);
            min_top = min_top.min(z);
            top.push(m.vertex([x, y, z]));
        }
    }
    let mut base = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = l.xy(c0 + i, r0 + j);
            base.push(m.vertex([x, y, 0.0]));
        }
    }
    let at = |v: &Vec<u32>, i: usize, j: usize| v[j * nx + i];

    let top_start = m.triangles.len();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            m.quad(at(&top, i, j), at(&top, i + 1, j), at(&top, i + 1, j + 1), at(&top, i, j + 1));
        }
    }
    m.top = top_start..m.triangles.len();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            m.quad(at(&base, i, j), at(&base, i, j + 1), at(&base, i + 1, j + 1), at(&base, i + 1, j));
        }
    }
    // walls, walking the boundary counter-clockwise seen from above
    let mut ring = Vec::with_capacity(2 * (nx + ny));
    ring.extend((0..nx - 1).map(|i| (i, 0)));
    ring.extend((0..ny - 1).map(|j| (nx - 1, j)));
    ring.extend((1..nx).rev().map(|i| (i, ny - 1)));
    ring.extend((1..ny).rev().map(|j| (0, j)));
    for k in 0..ring.len() {
        let (a, b) = (ring[k], ring[(k + 1) % ring.len()]);
        m.quad(at(&base, a.0, a.1), at(&base, b.0, b.1), at(&top, b.0, b.1), at(&top, a.0, a.1));
    }

    if l.cfg.hollow {
        let (x0, y0) = l.xy(c0, r0);
        let (x1, y1) = l.xy(c1, r1);
        hollow_out(&mut m, l.cfg, [x0, y0, x1, y1], min_top)?;
    }
    Ok(m)
}

/// Add a closed inward-facing cavity under the terrain, with pillars when they fit.
fn hollow_out(m: &mut SolidMesh, cfg: &FabricationConfig, rect: [f64; 4], min_top: f64) -> Result<()> {
    let s = cfg.shell_mm;
    if 2.0 * s >= min_top {
        return Err(Error::Fabrication(format!(
            "shell {s} mm is too thick for the lowest model height {min_top:.3} mm"
        )));
    }
    let (zf, zc) = (s, min_top - s);
    let inner = [rect[0] + s, rect[1] + s, rect[2] - s, rect[3] - s];
    let (w, d) = (inner[2] - inner[0], inner[3] - inner[1]);
    if !(w > 0.0 && d > 0.0) {
        return Err(Error::Fabrication(format!(
            "shell {s} mm leaves no interior in a {:.3} mm tile",
            (rect[2] - rect[0]).min(rect[3] - rect[1])
        )));
    }
    let pitch = cfg.pillar_pitch_mm;
    let (px, py) = ((w / pitch).floor() as usize, (d / pitch).floor() as usize);
    if cfg.pillar_radius_mm == 0.0 || px == 0 || py == 0 {
        box_cavity(m, inner, zf, zc);
    } else {
        let cx = 0.5 * (inner[0] + inner[2]) - 0.5 * px as f64 * pitch;
        let cy = 0.5 * (inner[1] + inner[3]) - 0.5 * py as f64 * pitch;
        pillared_cavity(m, [cx, cy], pitch, [px, py], cfg.pillar_radius_mm, zf, zc);
    }
    Ok(())
}

fn box_cavity(m: &mut SolidMesh, r: [f64; 4], zf: f64, zc: f64) {
    let corners = [[r[0], r[1]], [r[2], r[1]], [r[2], r[3]], [r[0], r[3]]];
    let lo: Vec<u32> = corners.iter().map(|c| m.vertex([c[0], c[1], zf])).collect();
    let hi: Vec<u32> = corners.iter().map(|c| m.vertex([c[0], c[1], zc])).collect();
    // normals point into the void
    m.quad(lo[0], lo[1], lo[2], lo[3]);
    m.quad(hi[0], hi[3], hi[2], hi[1]);
    for k in 0..4 {
        let n = (k + 1) % 4;
        m.quad(lo[k], hi[k], hi[n], lo[n]);
    }
}

/// Cavity made of `n[0] × n[1]` square cells, each with an octagonal pillar at its centre.
fn pillared_cavity(m: &mut SolidMesh, origin: [f64; 2], pitch: f64, n: [usize; 2], radius: f64, zf: f64, zc: f64) {
    let half = 0.5 * pitch;
    // cell boundary lattice at half-pitch spacing, shared between neighbouring cells
    let (gx, gy) = (2 * n[0] + 1, 2 * n[1] + 1);
    let mut layer = |z: f64| -> Vec<u32> {
        let mut v = Vec::with_capacity(gx * gy);
        for j in 0..gy {
            for i in 0..gx {
                let on_boundary = i % 2 == 0 || j % 2 == 0;
                let p = [origin[0] + i as f64 * half, origin[1] + j as f64 * half, z];
                v.push(if on_boundary { m.vertex(p) } else { u32::MAX });
            }
        }
        v
    };
    let floor = layer(zf);
    let ceil = layer(zc);
    let at = |v: &Vec<u32>, i: usize, j: usize| v[j * gx + i];
    // boundary points of one cell, counter-clockwise from the east midpoint
    const RING: [(usize, usize); 8] = [(2, 1), (2, 2), (1, 2), (0, 2), (0, 1), (0, 0), (1, 0), (2, 0)];
    for cj in 0..n[1] {
        for ci in 0..n[0] {
            let (bi, bj) = (2 * ci, 2 * cj);
            let cx = origin[0] + (ci as f64 + 0.5) * pitch;
            let cy = origin[1] + (cj as f64 + 0.5) * pitch;
            // octagon vertices sit on the rays to the cell ring points
            let oct = |m: &mut SolidMesh, z: f64| -> [u32; 8] {
                std::array::from_fn(|k| {
                    let a = k as f64 * std::f64::consts::FRAC_PI_4;
                    m.vertex([cx + radius * a.cos(), cy + radius * a.sin(), z])
                })
            };
            let of = oct(m, zf);
            let oc = oct(m, zc);
            for k in 0..8 {
                let n1 = (k + 1) % 8;
                let (si, sj) = RING[k];
                let (ti, tj) = RING[n1];
                let (sf, tf) = (at(&floor, bi + si, bj + sj), at(&floor, bi + ti, bj + tj));
                let (sc, tc) = (at(&ceil, bi + si, bj + sj), at(&ceil, bi + ti, bj + tj));
                // floor faces up, ceiling faces down, pillar sides face out of the pillar
                m.quad(of[k], sf, tf, of[n1]);
                m.quad(oc[k], oc[n1], tc, sc);
                m.quad(of[k], of[n1], oc[n1], oc[k]);
            }
        }
    }
    // cavity side walls along the outer boundary of the cell lattice
    let mut ring = Vec::with_capacity(2 * (gx + gy));
    ring.extend((0..gx - 1).map(|i| (i, 0)));
    ring.extend((0..gy - 1).map(|j| (gx - 1, j)));
    ring.extend((1..gx).rev().map(|i| (i, gy - 1)));
    ring.extend((1..gy).rev().map(|j| (0, j)));
    for k in 0..ring.len() {
        let (a, b) = (ring[k], ring[(k + 1) % ring.len()]);
        m.quad(at(&floor, a.0, a.1), at(&ceil, a.0, a.1), at(&ceil, b.0, b.1), at(&floor, b.0, b.1));
    }
}

const STL_HEADER: &[u8] = b"binary STL terrain tile";

pub fn write_stl(mesh: &SolidMesh, mut w: impl Write) -> Result<()> {
    if mesh.triangles.is_empty() {
        return Err(Error::Fabrication("empty mesh".into()));
    }
    let mut header = [0u8; 80];
    header[..STL_HEADER.len()].copy_from_slice(STL_HEADER);
    w.write_all(&header)?;
    w.write_all(&(mesh.triangles.len() as u32).to_le_bytes())?;
    let mut rec = [0u8; 50];
    for &t in &mesh.triangles {
        let [a, b, c] = mesh.corners(t);
        let nrm = cross(sub(b, a), sub(c, a));
        let len = norm(nrm);
        let nrm = if len > 0.0 { nrm.map(|v| v / len) } else { [0.0; 3] };
        for (k, v) in nrm.iter().chain(&a).chain(&b).chain(&c).enumerate() {
            rec[4 * k..4 * k + 4].copy_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&rec)?;
    }
    Ok(())
}

pub fn export_stl(mesh: &SolidMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_stl(mesh, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Triangles of a binary STL as `[normal, a, b, c]`.
pub fn read_stl(mut r: impl Read) -> Result<Vec<[[f32; 3]; 4]>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 84 {
        return Err(Error::Fabrication("STL shorter than its header".into()));
    }
    let n = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 84 + 50 * n {
        return Err(Error::Fabrication(format!("STL size {} does not match {n} triangles", bytes.len())));
    }
    Ok((0..n)
        .map(|i| {
            let rec = &bytes[84 + 50 * i..84 + 50 * i + 48];
            let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().expect("4 bytes"));
            std::array::from_fn(|v| [f(3 * v), f(3 * v + 1), f(3 * v + 2)])
        })
        .collect())
}
