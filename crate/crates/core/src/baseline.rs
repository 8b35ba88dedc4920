//! Comparison method: inverse-speed weighted centroid as the meeting point,
//! RRT* on the binary map for each agent's path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{ContinuousPoint, OccupancyGrid};
use crate::paths::{PathPoint, TimedPath};
use crate::planner::{plan_detailed, PlanError, Scenario};
use crate::velocity::{AgentSpec, DomainSelector};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("invalid RRT* parameters: {0}")]
    BadParams(String),
    #[error("start ({}, {}) is not in free space", at.x, at.y)]
    StartBlocked { at: ContinuousPoint },
    #[error("goal ({}, {}) is not in free space", at.x, at.y)]
    GoalBlocked { at: ContinuousPoint },
    #[error("no connection to the goal after {0} iterations")]
    NoConnection(usize),
    #[error("agent {id:?} uses domain {domain:?}; the baseline only handles the normal domain")]
    UnsupportedDomain { id: String, domain: DomainSelector },
    #[error("at least two agents are required")]
    TooFewAgents,
}

/// Neighborhood used for choosing parents and rewiring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NeighborhoodRadius {
    Fixed { meters: f64 },
    /// `gamma * sqrt(ln k / k)`, capped at the step length. `None` picks the
    /// smallest gamma for which RRT* is asymptotically optimal.
    Adaptive { gamma: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrtParams {
    pub max_iterations: usize,
    pub step_length: f64,
    pub goal_bias: f64,
    pub radius: NeighborhoodRadius,
    pub rng_seed: u64,
}

impl RrtParams {
    /// Defaults scaled to the map: steps of five cells.
    pub fn for_map(grid: &OccupancyGrid, rng_seed: u64, max_iterations: usize) -> Self {
        Self {
            max_iterations,
            step_length: 5.0 * grid.cell_size(),
            goal_bias: 0.05,
            radius: NeighborhoodRadius::Adaptive { gamma: None },
            rng_seed,
        }
    }

    fn validate(&self) -> Result<(), BaselineError> {
        if self.max_iterations == 0 {
            return Err(BaselineError::BadParams("max_iterations must be positive".into()));
        }
        if !(self.step_length > 0.0 && self.step_length.is_finite()) {
            return Err(BaselineError::BadParams(format!("step_length {}", self.step_length)));
        }
        if !(0.0..=0.2).contains(&self.goal_bias) {
            return Err(BaselineError::BadParams(format!("goal_bias {} not in [0, 0.2]", self.goal_bias)));
        }
        match self.radius {
            NeighborhoodRadius::Fixed { meters } if !(meters > 0.0) => {
                Err(BaselineError::BadParams(format!("radius {meters}")))
            }
            NeighborhoodRadius::Adaptive { gamma: Some(g) } if !(g > 0.0) => {
                Err(BaselineError::BadParams(format!("gamma {g}")))
            }
            _ => Ok(()),
        }
    }
}

/// Start positions averaged with weights `1 / v_max`. May land on an obstacle.
pub fn weighted_centroid(agents: &[AgentSpec], grid: &OccupancyGrid) -> ContinuousPoint {
    let (mut x, mut y, mut w) = (0.0, 0.0, 0.0);
    for a in agents {
        let weight = 1.0 / a.law.v_max();
        let p = grid.center(a.start);
        x += weight * p.x;
        y += weight * p.y;
        w += weight;
    }
    ContinuousPoint::new(x / w, y / w)
}

/// Straight segment test, sampled every half cell.
fn segment_free(grid: &OccupancyGrid, a: ContinuousPoint, b: ContinuousPoint) -> bool {
    let n = (a.distance(&b) / (0.5 * grid.cell_size())).ceil().max(1.0) as usize;
    (0..=n).all(|k| {
        grid.cell_at(a.lerp(&b, k as f64 / n as f64))
            .is_some_and(|c| grid.is_free(c))
    })
}

fn point_free(grid: &OccupancyGrid, p: ContinuousPoint) -> bool {
    grid.cell_at(p).is_some_and(|c| grid.is_free(c))
}

#[derive(Debug, Clone)]
struct Node {
    point: ContinuousPoint,
    parent: Option<usize>,
    cost: f64,
    children: Vec<usize>,
}

/// Bucket grid over tree nodes for radius and nearest queries.
struct Buckets {
    size: f64,
    cols: usize,
    rows: usize,
    origin: ContinuousPoint,
    cells: Vec<Vec<usize>>,
}

impl Buckets {
    fn new(grid: &OccupancyGrid, size: f64) -> Self {
        let (lo, hi) = grid.bounds();
        let cols = ((hi.x - lo.x) / size).ceil().max(1.0) as usize;
        let rows = ((hi.y - lo.y) / size).ceil().max(1.0) as usize;
        Self {
            size,
            cols,
            rows,
            origin: lo,
            cells: vec![Vec::new(); cols * rows],
        }
    }

    fn key(&self, p: ContinuousPoint) -> (usize, usize) {
        let c = (((p.x - self.origin.x) / self.size).floor().max(0.0) as usize).min(self.cols - 1);
        let r = (((p.y - self.origin.y) / self.size).floor().max(0.0) as usize).min(self.rows - 1);
        (r, c)
    }

    fn insert(&mut self, p: ContinuousPoint, id: usize) {
        let (r, c) = self.key(p);
        self.cells[r * self.cols + c].push(id);
    }

    /// Ids in buckets within `ring` of the bucket holding `p`, in bucket order.
    fn ring(&self, p: ContinuousPoint, ring: usize, out: &mut Vec<usize>) {
        let (r, c) = self.key(p);
        let (r, c, ring) = (r as isize, c as isize, ring as isize);
        for rr in (r - ring)..=(r + ring) {
            for cc in (c - ring)..=(c + ring) {
                let edge = (rr - r).abs() == ring || (cc - c).abs() == ring;
                if edge && rr >= 0 && cc >= 0 && (rr as usize) < self.rows && (cc as usize) < self.cols {
                    out.extend_from_slice(&self.cells[rr as usize * self.cols + cc as usize]);
                }
            }
        }
    }

    fn nearest(&self, nodes: &[Node], p: ContinuousPoint) -> usize {
        let mut best: Option<(f64, usize)> = None;
        let mut ids = Vec::new();
        for ring in 0..=self.cols.max(self.rows) {
            ids.clear();
            self.ring(p, ring, &mut ids);
            for &id in &ids {
                let d = nodes[id].point.distance(&p);
                if best.is_none_or(|(bd, bid)| d < bd || (d == bd && id < bid)) {
                    best = Some((d, id));
                }
            }
            // Anything in the next ring is at least `ring * size` away.
            if let Some((bd, _)) = best {
                if bd <= ring as f64 * self.size {
                    break;
                }
            }
        }
        best.expect("tree is never empty").1
    }

    fn within(&self, nodes: &[Node], p: ContinuousPoint, radius: f64) -> Vec<usize> {
        let reach = (radius / self.size).ceil() as usize;
        let mut ids = Vec::new();
        for ring in 0..=reach {
            self.ring(p, ring, &mut ids);
        }
        ids.retain(|&id| nodes[id].point.distance(&p) <= radius);
        ids.sort_unstable();
        ids
    }
}

fn propagate(nodes: &mut [Node], root: usize) {
    let mut stack = vec![root];
    while let Some(n) = stack.pop() {
        for k in 0..nodes[n].children.len() {
            let ch = nodes[n].children[k];
            nodes[ch].cost = nodes[n].cost + nodes[n].point.distance(&nodes[ch].point);
            stack.push(ch);
        }
    }
}

/// RRT* from `start` to `goal` on the free cells of `grid`. Point times are
/// cumulative length over `v_max`.
pub fn rrt_star(
    grid: &OccupancyGrid,
    start: ContinuousPoint,
    goal: ContinuousPoint,
    params: &RrtParams,
    v_max: f64,
) -> Result<TimedPath, BaselineError> {
    params.validate()?;
    if !(v_max > 0.0) {
        return Err(BaselineError::BadParams(format!("v_max {v_max}")));
    }
    if !point_free(grid, start) {
        return Err(BaselineError::StartBlocked { at: start });
    }
    if !point_free(grid, goal) {
        return Err(BaselineError::GoalBlocked { at: goal });
    }
    let step = params.step_length;
    let h = grid.cell_size();
    let free_area = grid.free_count() as f64 * h * h;
    let gamma = match params.radius {
        NeighborhoodRadius::Adaptive { gamma } => {
            gamma.unwrap_or(2.0 * 1.5f64.sqrt() * (free_area / std::f64::consts::PI).sqrt())
        }
        NeighborhoodRadius::Fixed { .. } => 0.0,
    };
    let radius_at = |k: usize| match params.radius {
        NeighborhoodRadius::Fixed { meters } => meters,
        NeighborhoodRadius::Adaptive { .. } => {
            let k = (k.max(2)) as f64;
            (gamma * (k.ln() / k).sqrt()).min(step)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let (lo, hi) = grid.bounds();
    let mut nodes = vec![Node {
        point: start,
        parent: None,
        cost: 0.0,
        children: Vec::new(),
    }];
    let mut index = Buckets::new(grid, step);
    index.insert(start, 0);
    // Goal attachment is tracked outside the tree so the goal never parents.
    let mut goal_parent: Option<usize> = None;
    let goal_cost = |nodes: &[Node], p: usize| nodes[p].cost + nodes[p].point.distance(&goal);

    if start.distance(&goal) <= step && segment_free(grid, start, goal) {
        goal_parent = Some(0);
    }

    for _ in 0..params.max_iterations {
        let sample = if rng.gen::<f64>() < params.goal_bias {
            goal
        } else {
            ContinuousPoint::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y))
        };
        let near_id = index.nearest(&nodes, sample);
        let from = nodes[near_id].point;
        let d = from.distance(&sample);
        if d == 0.0 {
            continue;
        }
        let new = if d <= step { sample } else { from.lerp(&sample, step / d) };
        if !point_free(grid, new) || !segment_free(grid, from, new) {
            continue;
        }
        let radius = radius_at(nodes.len() + 1);
        let near = index.within(&nodes, new, radius);

        let mut parent = near_id;
        let mut cost = nodes[near_id].cost + from.distance(&new);
        for &n in &near {
            let c = nodes[n].cost + nodes[n].point.distance(&new);
            if c < cost && segment_free(grid, nodes[n].point, new) {
                parent = n;
                cost = c;
            }
        }
        let id = nodes.len();
        nodes.push(Node {
            point: new,
            parent: Some(parent),
            cost,
            children: Vec::new(),
        });
        nodes[parent].children.push(id);
        index.insert(new, id);

        for &n in &near {
            if n == parent {
                continue;
            }
            let c = cost + new.distance(&nodes[n].point);
            if c < nodes[n].cost && segment_free(grid, new, nodes[n].point) {
                let old = nodes[n].parent.expect("only the root lacks a parent");
                nodes[old].children.retain(|&x| x != n);
                nodes[n].parent = Some(id);
                nodes[n].cost = c;
                nodes[id].children.push(n);
                propagate(&mut nodes, n);
            }
        }

        if new.distance(&goal) <= step
            && goal_parent.is_none_or(|g| goal_cost(&nodes, id) < goal_cost(&nodes, g))
            && segment_free(grid, new, goal)
        {
            goal_parent = Some(id);
        }
    }

    let last = goal_parent.ok_or(BaselineError::NoConnection(params.max_iterations))?;
    let mut chain = vec![goal];
    let mut at = Some(last);
    while let Some(n) = at {
        chain.push(nodes[n].point);
        at = nodes[n].parent;
    }
    chain.reverse();
    let mut length = 0.0;
    let mut out = Vec::with_capacity(chain.len());
    for (k, p) in chain.iter().enumerate() {
        if k > 0 {
            length += chain[k - 1].distance(p);
        }
        out.push(PathPoint {
            point: *p,
            time: length / v_max,
        });
    }
    Ok(TimedPath::new(out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentComparison {
    pub id: String,
    pub fmm_length: f64,
    pub fmm_time: f64,
    pub baseline_length: Option<f64>,
    pub baseline_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_error: Option<String>,
    #[serde(skip)]
    pub baseline_path: Option<TimedPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub fmm_meeting_point: ContinuousPoint,
    pub fmm_meeting_time: f64,
    /// Cost field evaluated at the centroid cell, when every agent reaches it.
    pub fmm_time_at_centroid: Option<f64>,
    pub centroid: ContinuousPoint,
    pub centroid_in_free: bool,
    /// Where the baseline agents actually meet: the centroid, or the nearest
    /// free cell center when the centroid is blocked.
    pub baseline_goal: Option<ContinuousPoint>,
    pub baseline_feasible: bool,
    pub baseline_meeting_time: Option<f64>,
    pub note: String,
    pub agents: Vec<AgentComparison>,
}

/// Snap radius for blocked centroids, in cells.
pub const SNAP_RADIUS: usize = 5;

pub fn compare(scenario: &Scenario, params: &RrtParams) -> Result<ComparisonReport, ComparisonError> {
    params.validate()?;
    for a in scenario.agents() {
        if a.domain != DomainSelector::Normal {
            return Err(BaselineError::UnsupportedDomain {
                id: a.id.clone(),
                domain: a.domain,
            }
            .into());
        }
    }
    let (solution, artifacts) = plan_detailed(scenario)?;
    let grid = scenario.base_map();
    let centroid = weighted_centroid(scenario.agents(), grid);
    let centroid_cell = grid.cell_at(centroid).expect("centroid of in-bounds points is in bounds");
    let centroid_in_free = grid.is_free(centroid_cell);
    let fmm_time_at_centroid = artifacts
        .cost
        .in_support(centroid_cell)
        .then(|| artifacts.cost.values().get(centroid_cell));
    let baseline_goal = if centroid_in_free {
        Some(centroid)
    } else {
        grid.nearest_free(centroid_cell, SNAP_RADIUS).map(|c| grid.center(c))
    };

    let mut agents = Vec::new();
    let mut feasible = baseline_goal.is_some();
    for (k, (spec, route)) in scenario.agents().iter().zip(&solution.agents).enumerate() {
        let mut row = AgentComparison {
            id: spec.id.clone(),
            fmm_length: route.path.length(),
            fmm_time: route.arrival_time,
            baseline_length: None,
            baseline_time: None,
            baseline_error: None,
            baseline_path: None,
        };
        if let Some(goal) = baseline_goal {
            let p = RrtParams {
                rng_seed: params.rng_seed.wrapping_add(k as u64),
                ..*params
            };
            match rrt_star(grid, grid.center(spec.start), goal, &p, spec.law.v_max()) {
                Ok(path) => {
                    row.baseline_length = Some(path.length());
                    row.baseline_time = Some(path.length() / spec.law.v_max());
                    row.baseline_path = Some(path);
                }
                Err(e) => {
                    feasible = false;
                    row.baseline_error = Some(e.to_string());
                }
            }
        }
        agents.push(row);
    }
    let baseline_meeting_time = feasible.then(|| {
        agents
            .iter()
            .filter_map(|a| a.baseline_time)
            .fold(0.0, f64::max)
    });
    Ok(ComparisonReport {
        fmm_meeting_point: solution.meeting_point,
        fmm_meeting_time: solution.meeting_time,
        fmm_time_at_centroid,
        centroid,
        centroid_in_free,
        baseline_goal,
        baseline_feasible: feasible,
        baseline_meeting_time,
        note: "baseline times are path length over v_max on the binary map, without the clearance speed penalty".into(),
        agents,
    })
}

#[derive(Debug, Error)]
pub enum ComparisonError {
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Cell, GridIndex};
    use crate::velocity::VelocityLaw;

    fn agent(id: &str, i: usize, j: usize, v_max: f64) -> AgentSpec {
        AgentSpec {
            id: id.into(),
            start: GridIndex::new(i, j),
            law: VelocityLaw::Uniform { v_max },
            domain: DomainSelector::Normal,
        }
    }

    #[test]
    fn centroid_values() {
        let g = OccupancyGrid::all_free(12, 12, 1.0).unwrap();
        let eq = weighted_centroid(&[agent("a", 0, 0, 1.0), agent("b", 0, 10, 1.0)], &g);
        assert_eq!(eq, ContinuousPoint::new(5.0, 0.0));
        let biased = weighted_centroid(&[agent("a", 0, 0, 1.0), agent("b", 0, 10, 3.0)], &g);
        assert!((biased.x - 2.5).abs() < 1e-12 && biased.y == 0.0);
        // Equilateral-ish triangle: plain average.
        let tri = weighted_centroid(&[agent("a", 0, 0, 2.0), agent("b", 0, 6, 2.0), agent("c", 6, 3, 2.0)], &g);
        assert!((tri.x - 3.0).abs() < 1e-12 && (tri.y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn straight_on_empty_map_and_reproducible() {
        let g = OccupancyGrid::all_free(64, 64, 1.0).unwrap();
        let params = RrtParams::for_map(&g, 7, 5000);
        let (a, b) = (ContinuousPoint::new(3.0, 5.0), ContinuousPoint::new(58.0, 50.0));
        let p1 = rrt_star(&g, a, b, &params, 2.0).unwrap();
        let p2 = rrt_star(&g, a, b, &params, 2.0).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.length() <= 1.10 * a.distance(&b), "{} vs {}", p1.length(), a.distance(&b));
        assert_eq!(p1.first().unwrap().point, a);
        assert_eq!(p1.last().unwrap().point, b);
        assert!((p1.total_time() - p1.length() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn boxed_goal_fails() {
        let g = OccupancyGrid::from_fn(30, 30, 1.0, |c| {
            let ring = (c.i == 10 || c.i == 20) && (10..=20).contains(&c.j)
                || (c.j == 10 || c.j == 20) && (10..=20).contains(&c.i);
            if ring {
                Cell::Occupied
            } else {
                Cell::Free
            }
        })
        .unwrap();
        let params = RrtParams::for_map(&g, 1, 2000);
        let r = rrt_star(&g, ContinuousPoint::new(2.0, 2.0), ContinuousPoint::new(15.0, 15.0), &params, 1.0);
        assert_eq!(r, Err(BaselineError::NoConnection(2000)));
    }

    #[test]
    fn cost_never_increases_with_iterations() {
        let g = OccupancyGrid::from_fn(48, 48, 1.0, |c| {
            if c.j == 24 && c.i < 36 {
                Cell::Occupied
            } else {
                Cell::Free
            }
        })
        .unwrap();
        let (a, b) = (ContinuousPoint::new(4.0, 4.0), ContinuousPoint::new(44.0, 4.0));
        let mut last = f64::INFINITY;
        for k in [1000, 5000, 20000] {
            let p = rrt_star(&g, a, b, &RrtParams::for_map(&g, 3, k), 1.0).unwrap();
            assert!(p.length() <= last + 1e-12, "K = {k}: {} > {last}", p.length());
            last = p.length();
            for w in p.points().windows(2) {
                assert!(segment_free(&g, w[0].point, w[1].point));
            }
        }
    }

    #[test]
    fn parameter_checks() {
        let g = OccupancyGrid::all_free(8, 8, 1.0).unwrap();
        let mut p = RrtParams::for_map(&g, 0, 10);
        p.goal_bias = 0.3;
        assert!(matches!(
            rrt_star(&g, ContinuousPoint::new(0.0, 0.0), ContinuousPoint::new(5.0, 5.0), &p, 1.0),
            Err(BaselineError::BadParams(_))
        ));
        let blocked = g.with_cells(&[(GridIndex::new(5, 5), Cell::Occupied)]).unwrap();
        let p = RrtParams::for_map(&g, 0, 10);
        assert!(matches!(
            rrt_star(&blocked, ContinuousPoint::new(0.0, 0.0), ContinuousPoint::new(5.0, 5.0), &p, 1.0),
            Err(BaselineError::GoalBlocked { .. })
        ));
    }

    #[test]
    fn corridor_comparison() {
        let g = OccupancyGrid::from_fn(41, 5, 1.0, |c| if c.i == 0 || c.i == 4 { Cell::Occupied } else { Cell::Free })
            .unwrap();
        let s = Scenario::new(g.clone(), vec![agent("a", 2, 0, 1.0), agent("b", 2, 40, 1.0)], false).unwrap();
        let r = compare(&s, &RrtParams::for_map(&g, 11, 4000)).unwrap();
        assert!(r.centroid_in_free && r.baseline_feasible);
        assert!((r.fmm_meeting_point.x - 20.0).abs() <= 1.0);
        let analytic = 20.0;
        assert!((r.fmm_meeting_time - analytic).abs() <= 0.15 * analytic);
        assert!((r.baseline_meeting_time.unwrap() - analytic).abs() <= 0.15 * analytic);
        assert!(r.fmm_meeting_time <= r.fmm_time_at_centroid.unwrap());
    }

    #[test]
    fn blocked_centroid_is_flagged() {
        let g = OccupancyGrid::from_fn(31, 31, 1.0, |c| {
            if (12..=18).contains(&c.i) && (12..=18).contains(&c.j) {
                Cell::Occupied
            } else {
                Cell::Free
            }
        })
        .unwrap();
        let s = Scenario::new(g.clone(), vec![agent("a", 15, 1, 1.0), agent("b", 15, 29, 1.0)], false).unwrap();
        let r = compare(&s, &RrtParams::for_map(&g, 5, 3000)).unwrap();
        assert!(!r.centroid_in_free);
        assert_eq!(r.fmm_time_at_centroid, None);
        let goal = r.baseline_goal.unwrap();
        assert!(g.is_free(g.cell_at(goal).unwrap()));
        assert!(r.fmm_meeting_time.is_finite());

        let mut land = agent("c", 0, 0, 1.0);
        land.domain = DomainSelector::Inverted;
        let s = Scenario::new(g.clone(), vec![agent("a", 15, 1, 1.0), {
            land.start = GridIndex::new(15, 15);
            land
        }], false)
        .unwrap();
        assert!(matches!(
            compare(&s, &RrtParams::for_map(&g, 5, 10)),
            Err(ComparisonError::Baseline(BaselineError::UnsupportedDomain { .. }))
        ));
    }
}
