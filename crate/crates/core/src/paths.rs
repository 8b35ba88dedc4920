//! Continuous path extraction by steepest descent on an arrival-time field.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eikonal::{EikonalError, ScalarField};
use crate::grid::{ContinuousPoint, GridIndex};

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("descent did not reach the start within {steps} steps; stalled at ({}, {})", at.x, at.y)]
    MaxSteps { steps: usize, at: ContinuousPoint },
    #[error("descent stalled at ({}, {}): no neighboring cell has a smaller arrival time", at.x, at.y)]
    Stalled { at: ContinuousPoint },
    #[error("gradient undefined at ({}, {})", at.x, at.y)]
    NoGradient { at: ContinuousPoint },
    #[error("invalid descent parameters: {0}")]
    BadParams(String),
    #[error("path is empty")]
    Empty,
    #[error(transparent)]
    Field(#[from] EikonalError),
}

/// A sample of a timed path: position and arrival time there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub point: ContinuousPoint,
    pub time: f64,
}

/// Ordered samples from an agent's start toward its target. Serialized as a
/// list of `[x, y, t]` triples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct TimedPath {
    points: Vec<PathPoint>,
}

impl From<Vec<[f64; 3]>> for TimedPath {
    fn from(v: Vec<[f64; 3]>) -> Self {
        Self {
            points: v
                .into_iter()
                .map(|[x, y, t]| PathPoint {
                    point: ContinuousPoint::new(x, y),
                    time: t,
                })
                .collect(),
        }
    }
}

impl From<TimedPath> for Vec<[f64; 3]> {
    fn from(p: TimedPath) -> Self {
        p.points.iter().map(|s| [s.point.x, s.point.y, s.time]).collect()
    }
}

impl TimedPath {
    pub fn new(points: Vec<PathPoint>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[PathPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Option<&PathPoint> {
        self.points.first()
    }

    pub fn last(&self) -> Option<&PathPoint> {
        self.points.last()
    }

    /// Euclidean length of the polyline, meters.
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].point.distance(&w[1].point)).sum()
    }

    pub fn total_time(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.time)
    }

    pub fn max_gap(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[0].point.distance(&w[1].point))
            .fold(0.0, f64::max)
    }

    /// True when timestamps never decrease by more than `slack`.
    pub fn is_time_monotone(&self, slack: f64) -> bool {
        self.points.windows(2).all(|w| w[1].time >= w[0].time - slack)
    }

    pub fn push(&mut self, p: PathPoint) {
        self.points.push(p);
    }

    /// Writes `x,y,t` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,t\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.point.x, p.point.y, p.time));
        }
        out
    }
}

/// Step control for the descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentParams {
    /// Step length as a fraction of the cell size, in `(0, 1]`.
    pub step_fraction: f64,
    /// Stop when this close to the start cell center, meters. Defaults to one cell.
    pub stop_radius: Option<f64>,
    /// Defaults to `10 * (width + height) / step_fraction`.
    pub max_steps: Option<usize>,
    /// Below this gradient magnitude the discrete fallback is used.
    pub grad_epsilon: f64,
}

impl Default for DescentParams {
    fn default() -> Self {
        Self {
            step_fraction: 0.5,
            stop_radius: None,
            max_steps: None,
            grad_epsilon: 1e-9,
        }
    }
}

impl DescentParams {
    fn resolve(&self, t: &ScalarField) -> Result<(f64, f64, usize), PathError> {
        let h = t.cell_size();
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(PathError::BadParams(format!("step_fraction {} not in (0, 1]", self.step_fraction)));
        }
        let stop = self.stop_radius.unwrap_or(h);
        if !(stop >= 0.5 * h) {
            return Err(PathError::BadParams(format!("stop_radius {stop} below half a cell")));
        }
        let max_steps = self
            .max_steps
            .unwrap_or_else(|| (10.0 * (t.width() + t.height()) as f64 / self.step_fraction).ceil() as usize);
        if max_steps == 0 {
            return Err(PathError::BadParams("max_steps must be positive".into()));
        }
        Ok((self.step_fraction * h, stop, max_steps))
    }
}

/// Central-difference gradient at a cell center, one-sided next to
/// unreached cells, `None` where the cell itself is unreached.
fn node_gradient(t: &ScalarField, i: usize, j: usize) -> Option<[f64; 2]> {
    let h = t.cell_size();
    let at = |i: usize, j: usize| t.values()[i * t.width() + j];
    let c = at(i, j);
    if !c.is_finite() {
        return None;
    }
    let axis = |lo: Option<f64>, hi: Option<f64>| {
        let lo = lo.filter(|v| v.is_finite());
        let hi = hi.filter(|v| v.is_finite());
        match (lo, hi) {
            (Some(l), Some(r)) => (r - l) / (2.0 * h),
            (Some(l), None) => (c - l) / h,
            (None, Some(r)) => (r - c) / h,
            (None, None) => 0.0,
        }
    };
    let gx = axis(
        (j > 0).then(|| at(i, j - 1)),
        (j + 1 < t.width()).then(|| at(i, j + 1)),
    );
    let gy = axis(
        (i > 0).then(|| at(i - 1, j)),
        (i + 1 < t.height()).then(|| at(i + 1, j)),
    );
    Some([gx, gy])
}

/// Gradient `(dT/dx, dT/dy)` at `p`: node gradients at the four surrounding
/// cell centers blended with the bilinear weights of the finite corners.
pub fn gradient_at(t: &ScalarField, p: ContinuousPoint) -> Result<[f64; 2], PathError> {
    // Bounds check shared with interpolation.
    t.interpolate(p).map_err(|e| match e {
        EikonalError::NoFiniteCorner { .. } => PathError::NoGradient { at: p },
        other => PathError::Field(other),
    })?;
    let (j0, i0, fx, fy) = t.cell_frame(p);
    let mut acc = [0.0, 0.0];
    let mut wsum = 0.0;
    let mut any = [0.0, 0.0];
    let mut nany = 0.0;
    for (di, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dj, wx) in [(0, 1.0 - fx), (1, fx)] {
            if let Some(g) = node_gradient(t, i0 + di, j0 + dj) {
                let w = wx * wy;
                acc[0] += w * g[0];
                acc[1] += w * g[1];
                wsum += w;
                any[0] += g[0];
                any[1] += g[1];
                nany += 1.0;
            }
        }
    }
    if wsum > 0.0 {
        Ok([acc[0] / wsum, acc[1] / wsum])
    } else if nany > 0.0 {
        Ok([any[0] / nany, any[1] / nany])
    } else {
        Err(PathError::NoGradient { at: p })
    }
}

/// Halvings tried before falling back to the discrete step.
const BACKTRACK: usize = 4;

/// Descends `t` from `target` to the center of `start` and returns the path
/// in travel order (start first), each point stamped with `t` at that point.
///
/// `t` must be the arrival field seeded at `start`.
pub fn extract_path(
    t: &ScalarField,
    start: GridIndex,
    target: ContinuousPoint,
    params: &DescentParams,
) -> Result<TimedPath, PathError> {
    let (step, stop, max_steps) = params.resolve(t)?;
    let h = t.cell_size();
    let goal = ContinuousPoint::new(start.j as f64 * h, start.i as f64 * h);
    let goal_time = t.interpolate(goal)?;

    let mut p = target;
    let mut tp = t.interpolate(p)?;
    let mut samples = vec![PathPoint { point: p, time: tp }];
    let mut steps = 0;

    while p.distance(&goal) > stop {
        if steps >= max_steps {
            return Err(PathError::MaxSteps { steps, at: p });
        }
        steps += 1;
        if let Some((q, tq)) = gradient_step(t, p, tp, step, params.grad_epsilon)? {
            p = q;
            tp = tq;
            samples.push(PathPoint { point: p, time: tp });
            continue;
        }
        let (q, tq) = discrete_target(t, p, tp)?;
        push_segment(t, &mut samples, q, tq, step);
        p = q;
        tp = tq;
    }

    push_segment(t, &mut samples, goal, goal_time.min(tp), step);
    samples.reverse();
    Ok(TimedPath::new(samples))
}

/// Appends evenly spaced samples from the last point to `q`, at most `step`
/// apart, ending at `q` itself. Interpolated times are clamped into
/// `[tq, previous]` so the walk stays monotone.
fn push_segment(t: &ScalarField, samples: &mut Vec<PathPoint>, q: ContinuousPoint, tq: f64, step: f64) {
    let last = *samples.last().expect("walk starts with the target");
    let n = (last.point.distance(&q) / step).ceil().max(1.0) as usize;
    let mut prev = last.time;
    for k in 1..n {
        let s = last.point.lerp(&q, k as f64 / n as f64);
        let ts = t.interpolate(s).unwrap_or(prev).clamp(tq, prev);
        samples.push(PathPoint { point: s, time: ts });
        prev = ts;
    }
    samples.push(PathPoint { point: q, time: tq });
}

fn gradient_step(
    t: &ScalarField,
    p: ContinuousPoint,
    tp: f64,
    step: f64,
    eps: f64,
) -> Result<Option<(ContinuousPoint, f64)>, PathError> {
    let g = match gradient_at(t, p) {
        Ok(g) => g,
        Err(PathError::NoGradient { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let norm = g[0].hypot(g[1]);
    if !(norm >= eps) {
        return Ok(None);
    }
    let h = t.cell_size();
    let (hi_x, hi_y) = ((t.width() - 1) as f64 * h, (t.height() - 1) as f64 * h);
    let mut s = step;
    for _ in 0..=BACKTRACK {
        let q = ContinuousPoint::new(
            (p.x - s * g[0] / norm).clamp(0.0, hi_x),
            (p.y - s * g[1] / norm).clamp(0.0, hi_y),
        );
        let (qi, qj) = containing_cell(t, q);
        if let (Ok(tq), true) = (t.interpolate(q), value(t, qi, qj).is_finite()) {
            if tq < tp {
                return Ok(Some((q, tq)));
            }
        }
        s *= 0.5;
    }
    Ok(None)
}

/// Index of the cell whose square contains `p`, clamped to the grid.
fn containing_cell(t: &ScalarField, p: ContinuousPoint) -> (usize, usize) {
    let h = t.cell_size();
    let i = (p.y / h).round().clamp(0.0, (t.height() - 1) as f64) as usize;
    let j = (p.x / h).round().clamp(0.0, (t.width() - 1) as f64) as usize;
    (i, j)
}

fn value(t: &ScalarField, i: usize, j: usize) -> f64 {
    t.values()[i * t.width() + j]
}

/// Cell center with the smallest finite time below `tp` among the cell
/// containing `p` and its neighbors. Diagonal moves need both orthogonal
/// cells reached, so the straight segment never crosses an unreached square.
fn discrete_target(t: &ScalarField, p: ContinuousPoint, tp: f64) -> Result<(ContinuousPoint, f64), PathError> {
    let h = t.cell_size();
    let (ci, cj) = containing_cell(t, p);
    let reached = |i: isize, j: isize| {
        i >= 0
            && j >= 0
            && (i as usize) < t.height()
            && (j as usize) < t.width()
            && value(t, i as usize, j as usize).is_finite()
    };
    let (ci, cj) = (ci as isize, cj as isize);
    let mut best: Option<(f64, usize, usize)> = None;
    for di in -1isize..=1 {
        for dj in -1isize..=1 {
            let (i, j) = (ci + di, cj + dj);
            if !reached(i, j) || (di != 0 && dj != 0 && !(reached(ci + di, cj) && reached(ci, cj + dj))) {
                continue;
            }
            let v = value(t, i as usize, j as usize);
            if v < tp && best.is_none_or(|(b, _, _)| v < b) {
                best = Some((v, i as usize, j as usize));
            }
        }
    }
    best.map(|(v, i, j)| (ContinuousPoint::new(j as f64 * h, i as f64 * h), v))
        .ok_or(PathError::Stalled { at: p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eikonal::{fmm_solve, SourceSet, UNREACHED};
    use crate::grid::{Cell, OccupancyGrid};

    fn cone(n: usize, src: GridIndex) -> ScalarField {
        let g = OccupancyGrid::all_free(n, n, 1.0).unwrap();
        fmm_solve(&g, &ScalarField::like(&g, 1.0), &SourceSet::single(src)).unwrap()
    }

    #[test]
    fn ramp_gradient() {
        let vals: Vec<f64> = (0..6 * 5).map(|k| (k % 6) as f64 * 0.5).collect();
        let t = ScalarField::from_values(6, 5, 0.5, vals).unwrap();
        for p in [(1.1, 0.7), (0.5, 1.0), (1.3, 1.9), (0.0, 0.0)] {
            let g = gradient_at(&t, ContinuousPoint::new(p.0, p.1)).unwrap();
            assert!((g[0] - 1.0).abs() < 1e-12 && g[1].abs() < 1e-12, "{g:?} at {p:?}");
        }
    }

    #[test]
    fn cone_gradient_points_away_from_source() {
        let t = cone(21, GridIndex::new(10, 10));
        for x in [12.0, 12.5, 14.3, 17.0] {
            let g = gradient_at(&t, ContinuousPoint::new(x, 10.0)).unwrap();
            let angle = g[1].atan2(g[0]).to_degrees().abs();
            assert!(angle < 5.0, "angle {angle} at x = {x}");
        }
    }

    #[test]
    fn gradient_undefined_when_unreached() {
        let t = ScalarField::filled(4, 4, 1.0, UNREACHED);
        assert!(matches!(
            gradient_at(&t, ContinuousPoint::new(1.5, 1.5)),
            Err(PathError::NoGradient { .. })
        ));
    }

    #[test]
    fn same_cell_is_two_points() {
        let t = cone(9, GridIndex::new(4, 4));
        let path = extract_path(&t, GridIndex::new(4, 4), ContinuousPoint::new(4.2, 3.9), &DescentParams::default()).unwrap();
        assert_eq!(path.len(), 2);
        assert!(path.length() < 1.0);
        assert_eq!(path.first().unwrap().point, ContinuousPoint::new(4.0, 4.0));
    }

    #[test]
    fn straight_row_on_empty_map() {
        let g = OccupancyGrid::all_free(60, 7, 1.0).unwrap();
        let t = fmm_solve(&g, &ScalarField::like(&g, 1.0), &SourceSet::single(GridIndex::new(3, 2))).unwrap();
        let target = ContinuousPoint::new(52.0, 3.0);
        let path = extract_path(&t, GridIndex::new(3, 2), target, &DescentParams::default()).unwrap();
        assert!((path.length() - 50.0).abs() <= 0.05 * 50.0, "length {}", path.length());
        assert!(path.is_time_monotone(1e-9));
        assert!(path.points().iter().all(|p| (p.point.y - 3.0).abs() < 1e-9));
        assert_eq!(path.last().unwrap().point, target);
        assert!(path.max_gap() <= 0.5 + 1e-12);
    }

    #[test]
    fn detours_around_wall() {
        // Wall across the middle with a gap at the bottom.
        let g = OccupancyGrid::from_fn(21, 21, 1.0, |c| {
            if c.j == 10 && c.i < 16 {
                Cell::Occupied
            } else {
                Cell::Free
            }
        })
        .unwrap();
        let start = GridIndex::new(2, 2);
        let t = fmm_solve(&g, &ScalarField::like(&g, 1.0), &SourceSet::single(start)).unwrap();
        let target = ContinuousPoint::new(18.0, 2.0);
        let path = extract_path(&t, start, target, &DescentParams::default()).unwrap();
        assert!(path.is_time_monotone(1e-9));
        assert!(path.points().iter().any(|p| p.point.y >= 15.0));
        for p in path.points() {
            for i in 0..16 {
                assert!(p.point.distance(&ContinuousPoint::new(10.0, i as f64)) >= 0.5, "{:?} hits the wall", p.point);
            }
        }
        assert!(path.length() <= t.get(GridIndex::new(2, 18)) + 2.0);
    }

    #[test]
    fn bad_params_rejected() {
        let t = cone(5, GridIndex::new(2, 2));
        let p = DescentParams {
            step_fraction: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            extract_path(&t, GridIndex::new(2, 2), ContinuousPoint::new(0.0, 0.0), &p),
            Err(PathError::BadParams(_))
        ));
    }

    #[test]
    fn max_steps_reports_location() {
        let t = cone(41, GridIndex::new(0, 0));
        let p = DescentParams {
            max_steps: Some(3),
            ..Default::default()
        };
        let err = extract_path(&t, GridIndex::new(0, 0), ContinuousPoint::new(40.0, 40.0), &p).unwrap_err();
        assert!(matches!(err, PathError::MaxSteps { steps: 3, .. }));
    }

    #[test]
    fn json_triples() {
        let p = TimedPath::new(vec![
            PathPoint {
                point: ContinuousPoint::new(0.0, 1.0),
                time: 0.0,
            },
            PathPoint {
                point: ContinuousPoint::new(0.5, 1.0),
                time: 0.25,
            },
        ]);
        assert_eq!(serde_json::to_string(&p).unwrap(), "[[0.0,1.0,0.0],[0.5,1.0,0.25]]");
        assert_eq!(p.to_csv(), "x,y,t\n0,1,0\n0.5,1,0.25\n");
    }

    mod props {
        use super::*;
        use crate::velocity::{distance_map, speed_map, VelocityLaw};
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};

        fn cluttered(seed: u64) -> OccupancyGrid {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            OccupancyGrid::from_fn(24, 18, 0.5, |_| if rng.gen_bool(0.12) { Cell::Occupied } else { Cell::Free }).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(96))]
            #[test]
            fn descent_invariants(seed in any::<u64>(), pick in any::<(usize, usize)>(), alpha in 1.0f64..20.0) {
                let g = cluttered(seed);
                let free: Vec<GridIndex> = (0..g.len()).map(|k| g.unflat(k)).filter(|&c| g.is_free(c)).collect();
                prop_assume!(free.len() > 2 && g.has_obstacles());
                let start = free[pick.0 % free.len()];
                let d = distance_map(&g).unwrap();
                let v = speed_map(&g, &d, &VelocityLaw::Exponential { alpha, v_max: 1.0 }).unwrap();
                let t = fmm_solve(&g, &v, &SourceSet::single(start)).unwrap();
                let goal = free[pick.1 % free.len()];
                prop_assume!(t.get(goal).is_finite());
                let target = g.center(goal);
                let params = DescentParams::default();
                let path = extract_path(&t, start, target, &params).unwrap();
                let h = g.cell_size();
                prop_assert!(path.is_time_monotone(1e-9));
                prop_assert!(path.max_gap() <= 0.5 * h + 1e-9);
                prop_assert!(path.first().unwrap().point.distance(&g.center(start)) <= h);
                prop_assert_eq!(path.last().unwrap().point, target);
                prop_assert!(path.length() >= g.center(start).distance(&target) - 1e-9);
                for p in path.points() {
                    let c = g.cell_at(p.point).unwrap();
                    prop_assert!(g.is_free(c), "{:?} inside an obstacle", p.point);
                }
            }

            #[test]
            fn reversal_symmetry_on_empty_maps(a in (0usize..30, 0usize..30), b in (0usize..30, 0usize..30)) {
                let g = OccupancyGrid::all_free(30, 30, 1.0).unwrap();
                let (s, e) = (GridIndex::new(a.0, a.1), GridIndex::new(b.0, b.1));
                prop_assume!(g.center(s).distance(&g.center(e)) > 3.0);
                let speed = ScalarField::like(&g, 1.0);
                let fwd = fmm_solve(&g, &speed, &SourceSet::single(s)).unwrap();
                let back = fmm_solve(&g, &speed, &SourceSet::single(e)).unwrap();
                let p1 = extract_path(&fwd, s, g.center(e), &DescentParams::default()).unwrap();
                let p2 = extract_path(&back, e, g.center(s), &DescentParams::default()).unwrap();
                prop_assert!((p1.length() - p2.length()).abs() <= 0.05 * p1.length().max(p2.length()));
                prop_assert!(p1.length() <= fwd.get(e) + 2.0);
            }
        }
    }
}
