//! Terrain heightfields: ingestion, resampling, slope and point queries.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::raster::{self, AsciiGrid, RasterGeometry};
use crate::scalar::Real;

/// Georeferenced heightfield. Heights are row-major, row 0 at the south edge,
/// sampled at cell centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TerrainGrid<T: Real> {
    pub geometry: RasterGeometry<T>,
    pub heights: Vec<T>,
    pub nodata_sentinel: T,
}

/// Per-cell slope angle and unit surface normal.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeField<T: Real> {
    pub geometry: RasterGeometry<T>,
    /// Radians in `[0, π/2)`.
    pub theta: Vec<T>,
    pub normals: Vec<Vec3<T>>,
}

impl<T: Real> SlopeField<T> {
    pub fn theta_at(&self, col: usize, row: usize) -> T {
        self.theta[self.geometry.index(col, row)]
    }

    pub fn max_theta(&self) -> T {
        self.theta.iter().copied().fold(T::zero(), T::max)
    }
}

impl<T: Real> TerrainGrid<T> {
    pub fn new(geometry: RasterGeometry<T>, heights: Vec<T>) -> Result<Self> {
        Self::with_nodata(geometry, heights, T::lit(raster::DEFAULT_NODATA))
    }

    pub fn with_nodata(geometry: RasterGeometry<T>, heights: Vec<T>, nodata_sentinel: T) -> Result<Self> {
        let geometry = RasterGeometry::new(
            geometry.n_cols,
            geometry.n_rows,
            geometry.cell_size,
            geometry.origin_x,
            geometry.origin_y,
        )?;
        if heights.len() != geometry.len() {
            return Err(Error::InvalidGrid(format!(
                "heights length {} != {}×{}",
                heights.len(),
                geometry.n_cols,
                geometry.n_rows
            )));
        }
        Ok(Self { geometry, heights, nodata_sentinel })
    }

    /// Build from a closure `f(x, y)` evaluated at cell centers.
    pub fn from_fn(geometry: RasterGeometry<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        let mut heights = Vec::with_capacity(geometry.len());
        for row in 0..geometry.n_rows {
            for col in 0..geometry.n_cols {
                let (x, y) = geometry.center(col, row);
                heights.push(f(x, y));
            }
        }
        Self::new(geometry, heights)
    }

    pub fn from_ascii(grid: &AsciiGrid) -> Result<Self> {
        let nodata = grid.nodata;
        let mut heights: Vec<Option<f64>> =
            grid.values.iter().map(|&v| if v == nodata || !v.is_finite() { None } else { Some(v) }).collect();
        fill_nodata(&grid.geometry, &mut heights)?;
        Self::with_nodata(
            grid.geometry.cast(),
            heights.into_iter().map(|h| T::lit(h.expect("filled"))).collect(),
            T::lit(nodata),
        )
    }

    #[inline]
    pub fn height(&self, col: usize, row: usize) -> T {
        self.heights[self.geometry.index(col, row)]
    }

    pub fn min_height(&self) -> T {
        self.heights.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_height(&self) -> T {
        self.heights.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn to_ascii_string(&self) -> String {
        raster::format_ascii_grid(&self.geometry, &self.heights, self.nodata_sentinel.as_f64())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_ascii_string())?;
        Ok(())
    }

    /// Continuous cell coordinates of `(x, y)` clamped to the sample lattice.
    #[inline]
    fn lattice_coords(&self, x: T, y: T) -> (usize, usize, T, T) {
        let g = &self.geometry;
        let half = T::lit(0.5);
        let max_u = T::count(g.n_cols - 1);
        let max_v = T::count(g.n_rows - 1);
        let u = ((x - g.origin_x) / g.cell_size - half).max(T::zero()).min(max_u);
        let v = ((y - g.origin_y) / g.cell_size - half).max(T::zero()).min(max_v);
        let c0 = u.floor().to_usize().unwrap_or(0).min(g.n_cols - 2);
        let r0 = v.floor().to_usize().unwrap_or(0).min(g.n_rows - 2);
        (c0, r0, u - T::count(c0), v - T::count(r0))
    }

    /// Bilinear height and its gradient, clamping queries to the extent.
    #[inline]
    pub fn sample_clamped(&self, x: T, y: T) -> (T, T, T) {
        let (c0, r0, fu, fv) = self.lattice_coords(x, y);
        let h00 = self.height(c0, r0);
        let h10 = self.height(c0 + 1, r0);
        let h01 = self.height(c0, r0 + 1);
        let h11 = self.height(c0 + 1, r0 + 1);
        let one = T::one();
        let h = h00 * (one - fu) * (one - fv) + h10 * fu * (one - fv) + h01 * (one - fu) * fv + h11 * fu * fv;
        let dhdu = (h10 - h00) * (one - fv) + (h11 - h01) * fv;
        let dhdv = (h01 - h00) * (one - fu) + (h11 - h10) * fu;
        let inv = one / self.geometry.cell_size;
        (h, dhdu * inv, dhdv * inv)
    }

    /// Bilinear interpolation of the surrounding cell-center heights.
    pub fn height_at(&self, x: T, y: T) -> Result<T> {
        if !x.is_finite() || !y.is_finite() || !self.geometry.contains(x, y) {
            return Err(Error::Domain(format!("point ({x}, {y}) outside terrain extent")));
        }
        Ok(self.sample_clamped(x, y).0)
    }

    /// Resample onto a lattice with spacing `target_cell_size` spanning the
    /// same first-to-last cell-center extent.
    pub fn resample(&self, target_cell_size: T) -> Result<Self> {
        if !(target_cell_size > T::zero()) || !target_cell_size.is_finite() {
            return Err(Error::Domain(format!("target cell size must be positive, got {target_cell_size}")));
        }
        let g = &self.geometry;
        let span_x = g.cell_size * T::count(g.n_cols - 1);
        let span_y = g.cell_size * T::count(g.n_rows - 1);
        let count = |span: T| {
            // tolerate floating noise so identical spacing maps to identical counts
            let ratio = span / target_cell_size;
            let n = (ratio + T::lit(1e-9)).floor();
            n.to_usize().unwrap_or(0) + 1
        };
        let n_cols = count(span_x);
        let n_rows = count(span_y);
        if n_cols < 2 || n_rows < 2 {
            return Err(Error::Domain(format!("target cell size {target_cell_size} is coarser than the grid extent")));
        }
        let half = T::lit(0.5);
        let (x0, y0) = g.center(0, 0);
        let geometry = RasterGeometry::new(
            n_cols,
            n_rows,
            target_cell_size,
            x0 - half * target_cell_size,
            y0 - half * target_cell_size,
        )?;
        let mut heights = Vec::with_capacity(geometry.len());
        for row in 0..n_rows {
            for col in 0..n_cols {
                let x = x0 + T::count(col) * target_cell_size;
                let y = y0 + T::count(row) * target_cell_size;
                heights.push(self.sample_clamped(x, y).0);
            }
        }
        Self::with_nodata(geometry, heights, self.nodata_sentinel)
    }

    /// Slope angle from central-difference gradients (one-sided at the border).
    pub fn slope_field(&self) -> SlopeField<T> {
        let g = &self.geometry;
        let mut theta = Vec::with_capacity(g.len());
        let mut normals = Vec::with_capacity(g.len());
        for row in 0..g.n_rows {
            for col in 0..g.n_cols {
                let (dx, dy) = self.gradient(col, row);
                let mag = (dx * dx + dy * dy).sqrt();
                theta.push(mag.atan());
                normals.push(Vec3::new(-dx, -dy, T::one()).normalized());
            }
        }
        SlopeField { geometry: *g, theta, normals }
    }

    pub fn gradient(&self, col: usize, row: usize) -> (T, T) {
        let g = &self.geometry;
        let diff = |lo: T, hi: T, steps: usize| (hi - lo) / (g.cell_size * T::count(steps));
        let dx = if col == 0 {
            diff(self.height(0, row), self.height(1, row), 1)
        } else if col == g.n_cols - 1 {
            diff(self.height(col - 1, row), self.height(col, row), 1)
        } else {
            diff(self.height(col - 1, row), self.height(col + 1, row), 2)
        };
        let dy = if row == 0 {
            diff(self.height(col, 0), self.height(col, 1), 1)
        } else if row == g.n_rows - 1 {
            diff(self.height(col, row - 1), self.height(col, row), 1)
        } else {
            diff(self.height(col, row - 1), self.height(col, row + 1), 2)
        };
        (dx, dy)
    }

    pub fn cast<U: Real>(&self) -> TerrainGrid<U> {
        TerrainGrid {
            geometry: self.geometry.cast(),
            heights: self.heights.iter().map(|h| U::lit(h.as_f64())).collect(),
            nodata_sentinel: U::lit(self.nodata_sentinel.as_f64()),
        }
    }
}

/// Read an ESRI ASCII grid and fill nodata cells from their nearest valid neighbor.
pub fn load_dem<T: Real>(path: impl AsRef<Path>) -> Result<TerrainGrid<T>> {
    TerrainGrid::from_ascii(&raster::read_ascii_grid(path)?)
}

pub fn parse_dem<T: Real>(text: &str) -> Result<TerrainGrid<T>> {
    TerrainGrid::from_ascii(&raster::parse_ascii_grid(text)?)
}

/// Breadth-first propagation from valid cells (4-neighborhood, fixed visiting order).
fn fill_nodata(geometry: &RasterGeometry<f64>, cells: &mut [Option<f64>]) -> Result<()> {
    let mut queue: VecDeque<usize> = cells.iter().enumerate().filter_map(|(i, v)| v.map(|_| i)).collect();
    if queue.is_empty() {
        return Err(Error::InvalidGrid("grid holds no valid cells".into()));
    }
    let (nc, nr) = (geometry.n_cols, geometry.n_rows);
    while let Some(i) = queue.pop_front() {
        let value = cells[i];
        let (c, r) = (i % nc, i / nc);
        let mut neighbors = [None; 4];
        if c > 0 {
            neighbors[0] = Some(i - 1);
        }
        if c + 1 < nc {
            neighbors[1] = Some(i + 1);
        }
        if r > 0 {
            neighbors[2] = Some(i - nc);
        }
        if r + 1 < nr {
            neighbors[3] = Some(i + nc);
        }
        for n in neighbors.into_iter().flatten() {
            if cells[n].is_none() {
                cells[n] = value;
                queue.push_back(n);
            }
        }
    }
    Ok(())
}
