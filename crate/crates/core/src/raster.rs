//! Regular rasters and the ESRI ASCII grid format.
//!
//! Values are stored row-major with row 0 at the *south* edge so that row
//! index grows with `y`. The ASCII format stores the northernmost row first;
//! the reader and writer flip accordingly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_NODATA: f64 = -9999.0;

/// Placement of a regular grid of square cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RasterGeometry<T: Real> {
    pub n_cols: usize,
    pub n_rows: usize,
    pub cell_size: T,
    /// Lower-left corner of the lower-left cell.
    pub origin_x: T,
    pub origin_y: T,
}

impl<T: Real> RasterGeometry<T> {
    pub fn new(n_cols: usize, n_rows: usize, cell_size: T, origin_x: T, origin_y: T) -> Result<Self> {
        if n_cols < 2 || n_rows < 2 {
            return Err(Error::InvalidGrid(format!("grid too small ({n_cols}×{n_rows})")));
        }
        if !(cell_size > T::zero()) || !cell_size.is_finite() {
            return Err(Error::InvalidGrid(format!("cell size must be positive, got {cell_size}")));
        }
        Ok(Self { n_cols, n_rows, cell_size, origin_x, origin_y })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_cols * self.n_rows
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.n_cols + col
    }

    #[inline]
    pub fn cell_area(&self) -> T {
        self.cell_size * self.cell_size
    }

    pub fn width(&self) -> T {
        self.cell_size * T::count(self.n_cols)
    }

    pub fn height(&self) -> T {
        self.cell_size * T::count(self.n_rows)
    }

    pub fn center(&self, col: usize, row: usize) -> (T, T) {
        let half = T::lit(0.5);
        (
            self.origin_x + (T::count(col) + half) * self.cell_size,
            self.origin_y + (T::count(row) + half) * self.cell_size,
        )
    }

    pub fn contains(&self, x: T, y: T) -> bool {
        x >= self.origin_x
            && y >= self.origin_y
            && x <= self.origin_x + self.width()
            && y <= self.origin_y + self.height()
    }

    /// Cell containing `(x, y)`; points on the far edges map to the last cell.
    pub fn cell_of(&self, x: T, y: T) -> Option<(usize, usize)> {
        if !self.contains(x, y) {
            return None;
        }
        let c = ((x - self.origin_x) / self.cell_size).floor().to_usize()?;
        let r = ((y - self.origin_y) / self.cell_size).floor().to_usize()?;
        Some((c.min(self.n_cols - 1), r.min(self.n_rows - 1)))
    }

    /// Equality of extent and cell size within `tol`.
    pub fn aligned_with(&self, other: &Self, tol: f64) -> bool {
        let close = |a: T, b: T| (a.as_f64() - b.as_f64()).abs() <= tol;
        self.n_cols == other.n_cols
            && self.n_rows == other.n_rows
            && close(self.cell_size, other.cell_size)
            && close(self.origin_x, other.origin_x)
            && close(self.origin_y, other.origin_y)
    }

    pub fn cast<U: Real>(&self) -> RasterGeometry<U> {
        RasterGeometry {
            n_cols: self.n_cols,
            n_rows: self.n_rows,
            cell_size: U::lit(self.cell_size.as_f64()),
            origin_x: U::lit(self.origin_x.as_f64()),
            origin_y: U::lit(self.origin_y.as_f64()),
        }
    }
}

/// Single-band raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Raster<T: Real> {
    pub geometry: RasterGeometry<T>,
    pub values: Vec<T>,
}

impl<T: Real> Raster<T> {
    pub fn filled(geometry: RasterGeometry<T>, value: T) -> Self {
        Self { values: vec![value; geometry.len()], geometry }
    }

    pub fn from_values(geometry: RasterGeometry<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::InvalidGrid(format!("expected {} values, got {}", geometry.len(), values.len())));
        }
        Ok(Self { geometry, values })
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> T {
        self.values[self.geometry.index(col, row)]
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { geometry: self.geometry, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Divide by the maximum (or `cap` when given) and clamp into `[0, 1]`.
    pub fn normalized(&self, cap: Option<T>) -> Self {
        let denom = cap.unwrap_or_else(|| self.max());
        if !(denom > T::zero()) {
            return self.map(|_| T::zero());
        }
        self.map(|v| (v / denom).max(T::zero()).min(T::one()))
    }

    pub fn ensure_aligned(&self, other: &Raster<T>, what: &str) -> Result<()> {
        if self.geometry.aligned_with(&other.geometry, 1e-9) {
            Ok(())
        } else {
            Err(Error::Misaligned(what.to_string()))
        }
    }
}

/// Parsed ESRI ASCII grid, values south row first, nodata left in place.
#[derive(Debug, Clone, PartialEq)]
pub struct AsciiGrid {
    pub geometry: RasterGeometry<f64>,
    pub nodata: f64,
    pub values: Vec<f64>,
}

const HEADER_KEYS: [&str; 6] = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"];

pub fn parse_ascii_grid(text: &str) -> Result<AsciiGrid> {
    let mut header: [Option<f64>; 6] = [None; 6];
    let mut lines = text.lines().enumerate().peekable();

    while let Some(&(lineno, line)) = lines.peek() {
        let mut tokens = line.split_whitespace();
        let Some(first) = tokens.next() else {
            lines.next();
            continue;
        };
        if first.parse::<f64>().is_ok() || first.starts_with('-') || first.starts_with('.') {
            break;
        }
        let key = first.to_ascii_lowercase();
        let Some(slot) = HEADER_KEYS.iter().position(|k| *k == key) else {
            return Err(Error::Parse { line: lineno + 1, msg: format!("unknown header key `{first}`") });
        };
        if header[slot].is_some() {
            return Err(Error::Parse { line: lineno + 1, msg: format!("duplicate header key `{first}`") });
        }
        let value = tokens
            .next()
            .ok_or_else(|| Error::Parse { line: lineno + 1, msg: format!("missing value for `{first}`") })?;
        let value: f64 = value
            .parse()
            .map_err(|_| Error::Parse { line: lineno + 1, msg: format!("bad value `{value}` for `{first}`") })?;
        header[slot] = Some(value);
        lines.next();
    }

    let header_line = lines.peek().map(|(n, _)| n + 1).unwrap_or(1);
    let need = |slot: usize| {
        header[slot].ok_or_else(|| Error::Parse {
            line: header_line,
            msg: format!("missing header key `{}`", HEADER_KEYS[slot]),
        })
    };
    let ncols = need(0)?;
    let nrows = need(1)?;
    let as_count = |v: f64, key: &str| {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Parse { line: 1, msg: format!("`{key}` must be a non-negative integer") })
        }
    };
    let geometry =
        RasterGeometry::new(as_count(ncols, "ncols")?, as_count(nrows, "nrows")?, need(4)?, need(2)?, need(3)?)?;
    let nodata = header[5].unwrap_or(DEFAULT_NODATA);

    let mut north_first = Vec::with_capacity(geometry.len());
    let mut rows_read = 0;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows_read == geometry.n_rows {
            return Err(Error::Parse { line: lineno + 1, msg: "more data rows than nrows".into() });
        }
        let before = north_first.len();
        for tok in line.split_whitespace() {
            let v: f64 =
                tok.parse().map_err(|_| Error::Parse { line: lineno + 1, msg: format!("non-numeric cell `{tok}`") })?;
            north_first.push(v);
        }
        let got = north_first.len() - before;
        if got != geometry.n_cols {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("row has {got} values, expected {}", geometry.n_cols),
            });
        }
        rows_read += 1;
    }
    if rows_read != geometry.n_rows {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("found {rows_read} data rows, expected {}", geometry.n_rows),
        });
    }

    let mut values = Vec::with_capacity(geometry.len());
    for row in north_first.chunks(geometry.n_cols).rev() {
        values.extend_from_slice(row);
    }
    Ok(AsciiGrid { geometry, nodata, values })
}

pub fn read_ascii_grid(path: impl AsRef<Path>) -> Result<AsciiGrid> {
    parse_ascii_grid(&fs::read_to_string(path)?)
}

pub fn format_ascii_grid<T: Real>(geometry: &RasterGeometry<T>, values: &[T], nodata: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ncols {}", geometry.n_cols);
    let _ = writeln!(out, "nrows {}", geometry.n_rows);
    let _ = writeln!(out, "xllcorner {}", geometry.origin_x.as_f64());
    let _ = writeln!(out, "yllcorner {}", geometry.origin_y.as_f64());
    let _ = writeln!(out, "cellsize {}", geometry.cell_size.as_f64());
    let _ = writeln!(out, "NODATA_value {}", nodata);
    for row in values.chunks(geometry.n_cols).rev() {
        let line: Vec<String> = row.iter().map(|v| v.as_f64().to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_ascii_grid<T: Real>(
    path: impl AsRef<Path>,
    geometry: &RasterGeometry<T>,
    values: &[T],
    nodata: f64,
) -> Result<()> {
    fs::write(path, format_ascii_grid(geometry, values, nodata))?;
    Ok(())
}

impl<T: Real> Raster<T> {
    pub fn from_ascii(grid: &AsciiGrid) -> Self {
        Self { geometry: grid.geometry.cast(), values: grid.values.iter().map(|&v| T::lit(v)).collect() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_ascii(&read_ascii_grid(path)?))
    }

    pub fn to_ascii(&self) -> String {
        format_ascii_grid(&self.geometry, &self.values, DEFAULT_NODATA)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "ncols 3\nnrows 2\nxllcorner 10\nyllcorner 20\ncellsize 5\nNODATA_value -9999\n1 2 3\n4 5 6\n";

    #[test]
    fn first_data_row_is_north() {
        let g = parse_ascii_grid(SMALL).unwrap();
        assert_eq!(g.values, vec![4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
        assert_eq!(g.geometry.origin_x, 10.0);
    }

    #[test]
    fn keys_case_insensitive_any_order() {
        let text = "CELLSIZE 5\nnrows 2\nNCols 3\nYLLCORNER 20\nxllcorner 10\nnodata_value -1\n1 2 3\n4 5 6\n";
        let g = parse_ascii_grid(text).unwrap();
        assert_eq!(g.nodata, -1.0);
        assert_eq!(g.geometry.n_cols, 3);
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = "ncols 3\nncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n4 5 6\n";
        let err = parse_ascii_grid(text).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn missing_key_rejected() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\ncellsize 1\n1 2 3\n4 5 6\n";
        let err = parse_ascii_grid(text).unwrap_err().to_string();
        assert!(err.contains("yllcorner"), "{err}");
    }

    #[test]
    fn short_row_names_line() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n4 5\n";
        match parse_ascii_grid(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 7),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn non_numeric_cell_names_line() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 x 3\n4 5 6\n";
        match parse_ascii_grid(text).unwrap_err() {
            Error::Parse { line, msg } => {
                assert_eq!(line, 6);
                assert!(msg.contains("non-numeric"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn write_then_read_round_trips() {
        let g = parse_ascii_grid(SMALL).unwrap();
        let text = format_ascii_grid(&g.geometry, &g.values, g.nodata);
        assert_eq!(parse_ascii_grid(&text).unwrap(), g);
    }
}
