//! Occupancy grids, PGM map interchange and neighborhood queries.
//!
//! Cell `(i, j)` is row `i`, column `j`. Its center sits at
//! `x = j * cell_size`, `y = i * cell_size`, so row 0 of a PGM image maps to
//! `y = 0`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Occupancy of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Occupied,
}

impl Cell {
    pub fn is_free(self) -> bool {
        self == Cell::Free
    }

    pub fn flipped(self) -> Cell {
        match self {
            Cell::Free => Cell::Occupied,
            Cell::Occupied => Cell::Free,
        }
    }
}

/// Row/column address of a grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct GridIndex {
    pub i: usize,
    pub j: usize,
}

impl GridIndex {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

impl From<[usize; 2]> for GridIndex {
    fn from([i, j]: [usize; 2]) -> Self {
        Self { i, j }
    }
}

impl From<GridIndex> for [usize; 2] {
    fn from(c: GridIndex) -> Self {
        [c.i, c.j]
    }
}

impl fmt::Display for GridIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// A point in physical coordinates, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ContinuousPoint {
    pub x: f64,
    pub y: f64,
}

impl ContinuousPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &ContinuousPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Linear interpolation toward `other`; `s = 0` is `self`.
    pub fn lerp(&self, other: &ContinuousPoint, s: f64) -> ContinuousPoint {
        ContinuousPoint::new(self.x + s * (other.x - self.x), self.y + s * (other.y - self.y))
    }
}

impl From<[f64; 2]> for ContinuousPoint {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<ContinuousPoint> for [f64; 2] {
    fn from(p: ContinuousPoint) -> Self {
        [p.x, p.y]
    }
}

/// Neighborhood used by adjacency queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

const OFFSETS_4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
const OFFSETS_8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

impl Connectivity {
    /// Row-major ordered offsets.
    pub fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &OFFSETS_4,
            Connectivity::Eight => &OFFSETS_8,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid must be at least 2x2, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("cell size must be positive and finite, got {0}")]
    BadCellSize(f64),
    #[error("expected {expected} cells, got {actual}")]
    CellCount { expected: usize, actual: usize },
    #[error("cell {0} is out of bounds")]
    OutOfBounds(GridIndex),
}

#[derive(Debug, Error, PartialEq)]
#[error("PGM parse error at byte {offset}: {reason}")]
pub struct PgmError {
    pub offset: usize,
    pub reason: String,
}

impl PgmError {
    fn new(offset: usize, reason: impl Into<String>) -> Self {
        Self {
            offset,
            reason: reason.into(),
        }
    }
}

/// Binary free/occupied raster with a uniform square cell size.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    cell_size: f64,
    cells: Vec<Cell>,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, cell_size: f64, cells: Vec<Cell>) -> Result<Self, GridError> {
        if width < 2 || height < 2 {
            return Err(GridError::TooSmall { width, height });
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GridError::BadCellSize(cell_size));
        }
        if cells.len() != width * height {
            return Err(GridError::CellCount {
                expected: width * height,
                actual: cells.len(),
            });
        }
        Ok(Self {
            width,
            height,
            cell_size,
            cells,
        })
    }

    pub fn all_free(width: usize, height: usize, cell_size: f64) -> Result<Self, GridError> {
        Self::new(width, height, cell_size, vec![Cell::Free; width * height])
    }

    /// Builds a grid by evaluating `f(index)` for every cell in row-major order.
    pub fn from_fn(
        width: usize,
        height: usize,
        cell_size: f64,
        mut f: impl FnMut(GridIndex) -> Cell,
    ) -> Result<Self, GridError> {
        let mut cells = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                cells.push(f(GridIndex::new(i, j)));
            }
        }
        Self::new(width, height, cell_size, cells)
    }

    /// Parses a P2 or P5 PGM image. A cell is free iff its gray level,
    /// scaled to 0..=255, is strictly greater than `threshold`.
    pub fn load_pgm(bytes: &[u8], threshold: u8, cell_size: f64) -> Result<Self, PgmError> {
        let mut reader = PgmReader { bytes, pos: 0 };
        let magic_at = reader.pos;
        let magic = reader.token()?;
        let binary = match magic {
            b"P2" => false,
            b"P5" => true,
            other => {
                return Err(PgmError::new(
                    magic_at,
                    format!("unsupported magic number {:?}", String::from_utf8_lossy(other)),
                ))
            }
        };
        let width = reader.header_number("width")?;
        let height = reader.header_number("height")?;
        let maxval_at = reader.pos;
        let maxval = reader.header_number("maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(PgmError::new(maxval_at, format!("maxval {maxval} outside 1..=255")));
        }
        if width < 2 || height < 2 {
            return Err(PgmError::new(maxval_at, format!("image {width}x{height} smaller than 2x2")));
        }
        let n = width * height;
        let mut gray = Vec::with_capacity(n);
        let mut raster_start = reader.pos;
        if binary {
            // Exactly one whitespace byte separates maxval from the raster.
            let start = reader.pos + 1;
            raster_start = start;
            if reader.pos >= bytes.len() || !bytes[reader.pos].is_ascii_whitespace() {
                return Err(PgmError::new(reader.pos, "missing whitespace before raster"));
            }
            let end = start + n;
            if end > bytes.len() {
                return Err(PgmError::new(
                    bytes.len(),
                    format!("truncated raster: expected {n} bytes, found {}", bytes.len() - start),
                ));
            }
            gray.extend(bytes[start..end].iter().map(|&b| b as usize));
        } else {
            for _ in 0..n {
                let at = reader.pos;
                let v = reader.number().map_err(|e| {
                    if e.offset >= bytes.len() {
                        PgmError::new(bytes.len(), format!("truncated raster: expected {n} values"))
                    } else {
                        e
                    }
                })?;
                if v > maxval {
                    return Err(PgmError::new(at, format!("gray value {v} exceeds maxval {maxval}")));
                }
                gray.push(v);
            }
        }
        if let Some((k, &v)) = gray.iter().enumerate().find(|(_, &v)| v > maxval) {
            return Err(PgmError::new(raster_start + k, format!("gray value {v} exceeds maxval {maxval}")));
        }
        let cells = gray
            .into_iter()
            .map(|v| {
                let level = (v * 255 + maxval / 2) / maxval;
                if level > threshold as usize {
                    Cell::Free
                } else {
                    Cell::Occupied
                }
            })
            .collect();
        Self::new(width, height, cell_size, cells).map_err(|e| PgmError::new(0, e.to_string()))
    }

    /// Encodes as binary P5, maxval 255, free = 255 and occupied = 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.cells.iter().map(|c| if c.is_free() { 255u8 } else { 0u8 }));
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn contains(&self, c: GridIndex) -> bool {
        c.i < self.height && c.j < self.width
    }

    #[inline]
    pub fn flat(&self, c: GridIndex) -> usize {
        c.i * self.width + c.j
    }

    #[inline]
    pub fn unflat(&self, k: usize) -> GridIndex {
        GridIndex::new(k / self.width, k % self.width)
    }

    pub fn get(&self, c: GridIndex) -> Option<Cell> {
        self.contains(c).then(|| self.cells[self.flat(c)])
    }

    pub fn is_free(&self, c: GridIndex) -> bool {
        self.get(c) == Some(Cell::Free)
    }

    pub fn free_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_free()).count()
    }

    pub fn has_obstacles(&self) -> bool {
        self.cells.iter().any(|c| !c.is_free())
    }

    /// Returns a copy with the given cells overwritten.
    pub fn with_cells(&self, edits: &[(GridIndex, Cell)]) -> Result<Self, GridError> {
        let mut out = self.clone();
        for &(c, cell) in edits {
            if !self.contains(c) {
                return Err(GridError::OutOfBounds(c));
            }
            let k = out.flat(c);
            out.cells[k] = cell;
        }
        Ok(out)
    }

    /// Same raster with a different physical cell size.
    pub fn with_cell_size(&self, cell_size: f64) -> Result<Self, GridError> {
        Self::new(self.width, self.height, cell_size, self.cells.clone())
    }

    /// Swaps free and occupied cell-wise.
    pub fn invert(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            cell_size: self.cell_size,
            cells: self.cells.iter().map(|c| c.flipped()).collect(),
        }
    }

    /// Occupied cells with at least one 4-connected free neighbor.
    pub fn boundary_cells(&self) -> BTreeSet<GridIndex> {
        (0..self.cells.len())
            .filter(|&k| self.is_boundary_flat(k))
            .map(|k| self.unflat(k))
            .collect()
    }

    pub(crate) fn is_boundary_flat(&self, k: usize) -> bool {
        if self.cells[k].is_free() {
            return false;
        }
        let c = self.unflat(k);
        self.neighbors(c, Connectivity::Four).any(|n| self.is_free(n))
    }

    /// In-bounds neighbors of `c` in row-major order, regardless of occupancy.
    pub fn neighbors(&self, c: GridIndex, connectivity: Connectivity) -> impl Iterator<Item = GridIndex> + '_ {
        connectivity.offsets().iter().filter_map(move |&(di, dj)| {
            let i = c.i.checked_add_signed(di)?;
            let j = c.j.checked_add_signed(dj)?;
            (i < self.height && j < self.width).then_some(GridIndex::new(i, j))
        })
    }

    /// Free in-bounds neighbors of `c` in row-major order.
    pub fn free_neighbors(&self, c: GridIndex, connectivity: Connectivity) -> Vec<GridIndex> {
        self.neighbors(c, connectivity).filter(|&n| self.is_free(n)).collect()
    }

    pub fn center(&self, c: GridIndex) -> ContinuousPoint {
        ContinuousPoint::new(c.j as f64 * self.cell_size, c.i as f64 * self.cell_size)
    }

    /// Cell whose square contains `p`, or `None` outside the map.
    pub fn cell_at(&self, p: ContinuousPoint) -> Option<GridIndex> {
        let j = (p.x / self.cell_size).round();
        let i = (p.y / self.cell_size).round();
        if !(i >= 0.0 && j >= 0.0) {
            return None;
        }
        let c = GridIndex::new(i as usize, j as usize);
        self.contains(c).then_some(c)
    }

    /// Physical extent covered by the cell squares: `(min, max)` corners.
    pub fn bounds(&self) -> (ContinuousPoint, ContinuousPoint) {
        let h = self.cell_size;
        (
            ContinuousPoint::new(-0.5 * h, -0.5 * h),
            ContinuousPoint::new((self.width as f64 - 0.5) * h, (self.height as f64 - 0.5) * h),
        )
    }

    pub fn in_bounds(&self, p: ContinuousPoint) -> bool {
        let (lo, hi) = self.bounds();
        p.x >= lo.x && p.y >= lo.y && p.x <= hi.x && p.y <= hi.y
    }

    /// Nearest-neighbor resampling to a new raster size; the cell size is
    /// scaled so the physical extent is unchanged.
    pub fn resample_nearest(&self, width: usize, height: usize) -> Result<Self, GridError> {
        let cell_size = self.cell_size * self.width as f64 / width as f64;
        Self::from_fn(width, height, cell_size, |c| {
            let si = ((c.i as f64 + 0.5) * self.height as f64 / height as f64).floor() as usize;
            let sj = ((c.j as f64 + 0.5) * self.width as f64 / width as f64).floor() as usize;
            self.cells[si.min(self.height - 1) * self.width + sj.min(self.width - 1)]
        })
    }

    /// Closest free cell to `c` by center distance within `max_radius` cells,
    /// ties broken row-major.
    pub fn nearest_free(&self, c: GridIndex, max_radius: usize) -> Option<GridIndex> {
        let r = max_radius as isize;
        let mut best: Option<(isize, GridIndex)> = None;
        for di in -r..=r {
            for dj in -r..=r {
                let d2 = di * di + dj * dj;
                if d2 > r * r {
                    continue;
                }
                let (Some(i), Some(j)) = (c.i.checked_add_signed(di), c.j.checked_add_signed(dj)) else {
                    continue;
                };
                let n = GridIndex::new(i, j);
                if self.is_free(n) && best.is_none_or(|(bd, bn)| (d2, n) < (bd, bn)) {
                    best = Some((d2, n));
                }
            }
        }
        best.map(|(_, n)| n)
    }
}

struct PgmReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8], PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PgmError::new(start, "unexpected end of data"));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize, PgmError> {
        self.skip_space_and_comments();
        let at = self.pos;
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| PgmError::new(at, format!("expected a decimal number, found {:?}", String::from_utf8_lossy(tok))))
    }

    fn header_number(&mut self, what: &str) -> Result<usize, PgmError> {
        self.number()
            .map_err(|e| PgmError::new(e.offset, format!("malformed header {what}: {}", e.reason)))
    }
}
