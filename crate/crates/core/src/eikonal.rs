//! Fast marching solver for `|grad T| * V = 1` on a uniform grid.
//!
//! The frontier is a binary min-heap with lazy deletion. Entries are ordered
//! by `(T, flat index)`, so equal arrival times are accepted in row-major
//! order and every run is bit-identical.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::grid::{Connectivity, ContinuousPoint, GridIndex, OccupancyGrid};

/// Value of cells the front never reaches.
pub const UNREACHED: f64 = f64::INFINITY;

#[derive(Debug, Error, PartialEq)]
pub enum EikonalError {
    #[error("field is {actual:?} but the domain is {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("source set is empty")]
    EmptySources,
    #[error("source {0} is out of bounds")]
    SourceOutOfBounds(GridIndex),
    #[error("source {0} lies on an occupied or zero-speed cell")]
    SourceBlocked(GridIndex),
    #[error("local update needs at least one finite upwind value")]
    NoUpwindValue,
    #[error("local update needs h > 0 and finite f > 0, got h = {h}, f = {f}")]
    BadStep { h: f64, f: f64 },
    #[error("point ({x}, {y}) is outside the field")]
    OutOfBounds { x: f64, y: f64 },
    #[error("all cells around ({x}, {y}) are unreached")]
    NoFiniteCorner { x: f64, y: f64 },
    #[error("scalar field text, line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// One real value per cell: distances, speeds, arrival times or costs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    cell_size: f64,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn filled(width: usize, height: usize, cell_size: f64, value: f64) -> Self {
        Self {
            width,
            height,
            cell_size,
            values: vec![value; width * height],
        }
    }

    pub fn like(grid: &OccupancyGrid, value: f64) -> Self {
        Self::filled(grid.width(), grid.height(), grid.cell_size(), value)
    }

    pub fn from_values(width: usize, height: usize, cell_size: f64, values: Vec<f64>) -> Result<Self, EikonalError> {
        if values.len() != width * height {
            return Err(EikonalError::DimensionMismatch {
                expected: (width, height),
                actual: (values.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            cell_size,
            values,
        })
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

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, c: GridIndex) -> f64 {
        self.values[c.i * self.width + c.j]
    }

    #[inline]
    pub fn set(&mut self, c: GridIndex, v: f64) {
        self.values[c.i * self.width + c.j] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Largest finite value, if any.
    pub fn max_finite(&self) -> Option<f64> {
        self.values.iter().copied().filter(|v| v.is_finite()).reduce(f64::max)
    }

    pub fn matches(&self, grid: &OccupancyGrid) -> bool {
        self.width == grid.width() && self.height == grid.height()
    }

    /// Bilinear sample over the four surrounding cell centers. Unreached
    /// corners are dropped and the remaining weights renormalized.
    pub fn interpolate(&self, p: ContinuousPoint) -> Result<f64, EikonalError> {
        let h = self.cell_size;
        let (lo_x, lo_y) = (-0.5 * h, -0.5 * h);
        let (hi_x, hi_y) = ((self.width as f64 - 0.5) * h, (self.height as f64 - 0.5) * h);
        if !(p.x >= lo_x && p.x <= hi_x && p.y >= lo_y && p.y <= hi_y) {
            return Err(EikonalError::OutOfBounds { x: p.x, y: p.y });
        }
        let (j0, i0, fx, fy) = self.cell_frame(p);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (di, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dj, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wx * wy;
                let v = self.values[(i0 + di) * self.width + j0 + dj];
                if v.is_finite() && w > 0.0 {
                    acc += w * v;
                    wsum += w;
                }
            }
        }
        if wsum > 0.0 {
            return Ok(acc / wsum);
        }
        // On an edge or center whose weighted corners are all unreached:
        // average the finite corners of the stencil instead.
        let finite: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
            .iter()
            .map(|&(di, dj)| self.values[(i0 + di) * self.width + j0 + dj])
            .filter(|v| v.is_finite())
            .collect();
        let best = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        best.ok_or(EikonalError::NoFiniteCorner { x: p.x, y: p.y })
    }

    /// Lower-left stencil corner `(j0, i0)` and fractional offsets for `p`,
    /// clamped so the 2x2 stencil stays inside the field.
    pub(crate) fn cell_frame(&self, p: ContinuousPoint) -> (usize, usize, f64, f64) {
        let h = self.cell_size;
        let gx = (p.x / h).clamp(0.0, (self.width - 1) as f64);
        let gy = (p.y / h).clamp(0.0, (self.height - 1) as f64);
        let j0 = (gx.floor() as usize).min(self.width - 2);
        let i0 = (gy.floor() as usize).min(self.height - 2);
        (j0, i0, gx - j0 as f64, gy - i0 as f64)
    }

    /// Text form: `width height cell_size`, then one line per row of
    /// space-separated values with `inf` for unreached cells.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 8 + 32);
        let _ = writeln!(out, "{} {} {}", self.width, self.height, self.cell_size);
        for row in self.values.chunks(self.width) {
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                if v.is_infinite() && *v > 0.0 {
                    out.push_str("inf");
                } else {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EikonalError> {
        let err = |line: usize, reason: String| EikonalError::Parse { line, reason };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (ln, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(err(ln + 1, "header must be `width height cell_size`".into()));
        }
        let width: usize = parts[0].parse().map_err(|_| err(ln + 1, "bad width".into()))?;
        let height: usize = parts[1].parse().map_err(|_| err(ln + 1, "bad height".into()))?;
        let cell_size: f64 = parts[2].parse().map_err(|_| err(ln + 1, "bad cell size".into()))?;
        let mut values = Vec::with_capacity(width * height);
        for _ in 0..height {
            let (ln, row) = lines.next().ok_or_else(|| err(ln + 1, format!("expected {height} rows")))?;
            let before = values.len();
            for tok in row.split_whitespace() {
                let v = if tok == "inf" {
                    UNREACHED
                } else {
                    tok.parse::<f64>().map_err(|_| err(ln + 1, format!("bad value {tok:?}")))?
                };
                values.push(v);
            }
            if values.len() - before != width {
                return Err(err(ln + 1, format!("expected {width} values")));
            }
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln + 1, "trailing data".into()));
        }
        Ok(Self {
            width,
            height,
            cell_size,
            values,
        })
    }
}

/// Solver state of a cell during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellTag {
    Far,
    Considered,
    Accepted,
}

/// Cells where the front starts with `T = 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSet(Vec<GridIndex>);

impl SourceSet {
    pub fn new(cells: impl IntoIterator<Item = GridIndex>) -> Result<Self, EikonalError> {
        let mut cells: Vec<GridIndex> = cells.into_iter().collect();
        cells.sort();
        cells.dedup();
        if cells.is_empty() {
            return Err(EikonalError::EmptySources);
        }
        Ok(Self(cells))
    }

    pub fn single(c: GridIndex) -> Self {
        Self(vec![c])
    }

    pub fn cells(&self) -> &[GridIndex] {
        &self.0
    }
}

/// Upwind solution of the discrete Eikonal equation at one cell.
///
/// `a` and `b` are the smaller accepted neighbor times along x and y, `h`
/// the spacing and `f = 1 / V` the slowness.
pub fn local_update(a: f64, b: f64, h: f64, f: f64) -> Result<f64, EikonalError> {
    if !(h > 0.0 && h.is_finite() && f > 0.0 && f.is_finite()) {
        return Err(EikonalError::BadStep { h, f });
    }
    if !(a.is_finite() || b.is_finite()) {
        return Err(EikonalError::NoUpwindValue);
    }
    Ok(upwind(a, b, h * f))
}

/// Unchecked form of [`local_update`] with `hf = h * f` precomputed.
#[inline]
pub fn upwind(a: f64, b: f64, hf: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if hi - lo >= hf {
        lo + hf
    } else {
        let diff = a - b;
        0.5 * (a + b + (2.0 * hf * hf - diff * diff).sqrt())
    }
}

/// Signature of the per-cell update used by the marcher; swappable so the
/// verification campaigns can run a negative control.
pub type UpdateRule = fn(f64, f64, f64) -> f64;

/// Result of a traced solve.
#[derive(Debug, Clone)]
pub struct FmmTrace {
    pub field: ScalarField,
    /// Cells in acceptance order with their final values.
    pub accepted: Vec<(GridIndex, f64)>,
    /// Heap pops discarded as stale.
    pub stale_pops: usize,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    t: f64,
    k: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t.total_cmp(&other.t).then(self.k.cmp(&other.k))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Arrival times from `sources` over the free, positive-speed cells of
/// `domain`. Occupied, zero-speed and unreachable cells stay [`UNREACHED`].
pub fn fmm_solve(domain: &OccupancyGrid, speed: &ScalarField, sources: &SourceSet) -> Result<ScalarField, EikonalError> {
    march(domain, speed, sources, upwind, false).map(|t| t.field)
}

/// [`fmm_solve`] that also records the acceptance sequence.
pub fn fmm_solve_traced(domain: &OccupancyGrid, speed: &ScalarField, sources: &SourceSet) -> Result<FmmTrace, EikonalError> {
    march(domain, speed, sources, upwind, true)
}

/// [`fmm_solve`] with a caller-supplied update rule.
pub fn fmm_solve_with(
    domain: &OccupancyGrid,
    speed: &ScalarField,
    sources: &SourceSet,
    rule: UpdateRule,
) -> Result<ScalarField, EikonalError> {
    march(domain, speed, sources, rule, false).map(|t| t.field)
}

fn march(
    domain: &OccupancyGrid,
    speed: &ScalarField,
    sources: &SourceSet,
    rule: UpdateRule,
    trace: bool,
) -> Result<FmmTrace, EikonalError> {
    if !speed.matches(domain) {
        return Err(EikonalError::DimensionMismatch {
            expected: (domain.width(), domain.height()),
            actual: speed.dims(),
        });
    }
    let (w, hgt) = (domain.width(), domain.height());
    let h = domain.cell_size();
    let n = w * hgt;
    let passable = |k: usize| domain.cells()[k].is_free() && speed.values[k] > 0.0 && speed.values[k].is_finite();

    let mut t = vec![UNREACHED; n];
    let mut tags = vec![CellTag::Far; n];
    // Obstacles are frozen from the start and never updated.
    for (k, tag) in tags.iter_mut().enumerate() {
        if !passable(k) {
            *tag = CellTag::Accepted;
        }
    }

    let mut heap = BinaryHeap::with_capacity(4 * (w + hgt));
    for &s in sources.cells() {
        if !domain.contains(s) {
            return Err(EikonalError::SourceOutOfBounds(s));
        }
        let k = domain.flat(s);
        if !passable(k) {
            return Err(EikonalError::SourceBlocked(s));
        }
        t[k] = 0.0;
        tags[k] = CellTag::Considered;
        heap.push(Reverse(Entry { t: 0.0, k }));
    }

    let mut accepted = Vec::new();
    let mut stale_pops = 0;
    let accepted_value = |t: &[f64], tags: &[CellTag], k: usize| {
        if tags[k] == CellTag::Accepted {
            t[k]
        } else {
            UNREACHED
        }
    };

    while let Some(Reverse(Entry { t: tv, k })) = heap.pop() {
        if tags[k] == CellTag::Accepted || tv > t[k] {
            stale_pops += 1;
            continue;
        }
        tags[k] = CellTag::Accepted;
        if trace {
            accepted.push((domain.unflat(k), tv));
        }
        let (i, j) = (k / w, k % w);
        let mut visit = |ni: usize, nj: usize| {
            let nk = ni * w + nj;
            if tags[nk] == CellTag::Accepted {
                return;
            }
            let a = {
                let l = if nj > 0 { accepted_value(&t, &tags, nk - 1) } else { UNREACHED };
                let r = if nj + 1 < w { accepted_value(&t, &tags, nk + 1) } else { UNREACHED };
                l.min(r)
            };
            let b = {
                let u = if ni > 0 { accepted_value(&t, &tags, nk - w) } else { UNREACHED };
                let d = if ni + 1 < hgt { accepted_value(&t, &tags, nk + w) } else { UNREACHED };
                u.min(d)
            };
            let trial = rule(a, b, h / speed.values[nk]);
            if trial < t[nk] {
                t[nk] = trial;
                tags[nk] = CellTag::Considered;
                heap.push(Reverse(Entry { t: trial, k: nk }));
            }
        };
        if i > 0 {
            visit(i - 1, j);
        }
        if j > 0 {
            visit(i, j - 1);
        }
        if j + 1 < w {
            visit(i, j + 1);
        }
        if i + 1 < hgt {
            visit(i + 1, j);
        }
    }

    Ok(FmmTrace {
        field: ScalarField {
            width: w,
            height: hgt,
            cell_size: h,
            values: t,
        },
        accepted,
        stale_pops,
    })
}

/// Free cells 4-connected to `start` (inclusive), as a mask.
pub(crate) fn reachable_mask(domain: &OccupancyGrid, start: GridIndex) -> Vec<bool> {
    let mut seen = vec![false; domain.len()];
    if !domain.is_free(start) {
        return seen;
    }
    let mut stack = vec![start];
    seen[domain.flat(start)] = true;
    while let Some(c) = stack.pop() {
        for n in domain.neighbors(c, Connectivity::Four) {
            let k = domain.flat(n);
            if !seen[k] && domain.cells()[k].is_free() {
                seen[k] = true;
                stack.push(n);
            }
        }
    }
    seen
}
