//! Brute-force references for checking the marching solver on small maps:
//! Dijkstra on grid graphs, exhaustive obstacle distances, and seeded
//! property campaigns built on both.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::eikonal::{fmm_solve_with, reachable_mask, upwind, EikonalError, ScalarField, SourceSet, UpdateRule, UNREACHED};
use crate::grid::{Cell, GridError, GridIndex, OccupancyGrid};
use crate::velocity::distance_map;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("map has no occupied cells")]
    NoObstacles,
    #[error("source {0} is not a free cell with positive speed")]
    BadSource(GridIndex),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
}

/// Move set of the reference graph. Edge cost is Euclidean length over the
/// slower endpoint's speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GraphMetric {
    Four,
    Eight,
    /// Eight plus the knight moves.
    Sixteen,
}

impl GraphMetric {
    fn moves(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        const SIXTEEN: [(isize, isize); 16] = [
            (-2, -1),
            (-2, 1),
            (-1, -2),
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (-1, 2),
            (0, -1),
            (0, 1),
            (1, -2),
            (1, -1),
            (1, 0),
            (1, 1),
            (1, 2),
            (2, -1),
            (2, 1),
        ];
        match self {
            GraphMetric::Four => &FOUR,
            GraphMetric::Eight => &EIGHT,
            GraphMetric::Sixteen => &SIXTEEN,
        }
    }
}

/// Cells a move sweeps through besides its endpoints; all must be passable.
fn swept(di: isize, dj: isize) -> [(isize, isize); 2] {
    match (di.abs(), dj.abs()) {
        (1, 1) => [(di, 0), (0, dj)],
        (1, 2) => [(0, dj / 2), (di, dj / 2)],
        (2, 1) => [(di / 2, 0), (di / 2, dj)],
        _ => [(0, 0), (0, 0)],
    }
}

fn passable(domain: &OccupancyGrid, speed: &ScalarField, i: isize, j: isize) -> Option<usize> {
    if i < 0 || j < 0 || i as usize >= domain.height() || j as usize >= domain.width() {
        return None;
    }
    let k = i as usize * domain.width() + j as usize;
    let v = speed.values()[k];
    (domain.cells()[k].is_free() && v > 0.0 && v.is_finite()).then_some(k)
}

/// Shortest travel time from `source` over the grid graph.
pub fn dijkstra_time(
    domain: &OccupancyGrid,
    speed: &ScalarField,
    source: GridIndex,
    metric: GraphMetric,
) -> Result<ScalarField, OracleError> {
    dijkstra(domain, speed, source, metric, false)
}

fn dijkstra(
    domain: &OccupancyGrid,
    speed: &ScalarField,
    source: GridIndex,
    metric: GraphMetric,
    reverse_moves: bool,
) -> Result<ScalarField, OracleError> {
    if !speed.matches(domain) {
        return Err(EikonalError::DimensionMismatch {
            expected: (domain.width(), domain.height()),
            actual: speed.dims(),
        }
        .into());
    }
    let src = passable(domain, speed, source.i as isize, source.j as isize).ok_or(OracleError::BadSource(source))?;
    let h = domain.cell_size();
    let w = domain.width();
    let mut moves = metric.moves().to_vec();
    if reverse_moves {
        moves.reverse();
    }
    let mut dist = vec![UNREACHED; domain.len()];
    let mut done = vec![false; domain.len()];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Reverse((OrdF64(0.0), src)));
    while let Some(Reverse((OrdF64(d), k))) = heap.pop() {
        if done[k] {
            continue;
        }
        done[k] = true;
        let (i, j) = ((k / w) as isize, (k % w) as isize);
        for &(di, dj) in &moves {
            let Some(n) = passable(domain, speed, i + di, j + dj) else { continue };
            if swept(di, dj)
                .iter()
                .any(|&(si, sj)| passable(domain, speed, i + si, j + sj).is_none())
            {
                continue;
            }
            let len = ((di * di + dj * dj) as f64).sqrt() * h;
            let cand = d + len / speed.values()[k].min(speed.values()[n]);
            if cand < dist[n] {
                dist[n] = cand;
                heap.push(Reverse((OrdF64(cand), n)));
            }
        }
    }
    Ok(ScalarField::from_values(w, domain.height(), h, dist)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Exact distance from each free cell center to the nearest occupied cell
/// center. Occupied cells get 0.
pub fn nearest_obstacle_scan(domain: &OccupancyGrid) -> Result<ScalarField, OracleError> {
    let h = domain.cell_size();
    let obstacles: Vec<(f64, f64)> = (0..domain.len())
        .filter(|&k| !domain.cells()[k].is_free())
        .map(|k| ((k / domain.width()) as f64, (k % domain.width()) as f64))
        .collect();
    if obstacles.is_empty() {
        return Err(OracleError::NoObstacles);
    }
    let values = (0..domain.len())
        .map(|k| {
            if !domain.cells()[k].is_free() {
                return 0.0;
            }
            let (i, j) = ((k / domain.width()) as f64, (k % domain.width()) as f64);
            obstacles
                .iter()
                .map(|&(oi, oj)| (oi - i).hypot(oj - j))
                .fold(f64::INFINITY, f64::min)
                * h
        })
        .collect();
    Ok(ScalarField::from_values(domain.width(), domain.height(), h, values)?)
}

/// Where a property first failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub seed: u64,
    pub cell: GridIndex,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyOutcome {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    /// Largest violation margin seen, in seconds (or meters for distances).
    pub worst_excess: f64,
    pub first_failure: Option<Counterexample>,
}

impl PropertyOutcome {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            violations: 0,
            worst_excess: 0.0,
            first_failure: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn check(&mut self, ok: bool, excess: f64, seed: u64, cell: GridIndex, detail: impl FnOnce() -> String) {
        self.checked += 1;
        if ok {
            return;
        }
        self.violations += 1;
        self.worst_excess = self.worst_excess.max(excess);
        if self.first_failure.is_none() {
            self.first_failure = Some(Counterexample {
                seed,
                cell,
                detail: detail(),
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignReport {
    pub properties: Vec<PropertyOutcome>,
}

impl CampaignReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(PropertyOutcome::passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyOutcome> {
        self.properties.iter().find(|p| p.name == name)
    }

    pub fn merge(mut self, other: CampaignReport) -> Self {
        self.properties.extend(other.properties);
        self
    }
}

/// Maps the sandwich campaign runs on.
#[derive(Debug, Clone)]
pub enum CampaignMaps {
    /// Fresh random obstacles per trial.
    Random { size: usize, obstacle_fraction: f64 },
    /// The same occupancy every trial; only sources and speeds vary.
    Fixed(OccupancyGrid),
}

#[derive(Debug, Clone)]
pub struct SandwichConfig {
    pub maps: CampaignMaps,
    pub trials: usize,
    pub seed: u64,
    /// Per-cell speeds are drawn uniformly from this range. Equal bounds
    /// give a uniform speed and a centered source on the first trial.
    pub speed_range: (f64, f64),
}

impl Default for SandwichConfig {
    fn default() -> Self {
        Self {
            maps: CampaignMaps::Random {
                size: 32,
                obstacle_fraction: 0.15,
            },
            trials: 100,
            seed: 0,
            speed_range: (0.5, 1.0),
        }
    }
}

pub const UPPER_D8: &str = "fmm <= dijkstra8";
pub const LOWER_D16: &str = "dijkstra16 <= fmm*(1 + 0.6h/r + 0.03)";
pub const UPPER_D4: &str = "fmm <= dijkstra4";
pub const LOWER_EUCLID: &str = "fmm >= euclidean/v_max";
pub const SUPPORT: &str = "fmm finite on the 4-connected component";
pub const DISTANCE_SCAN: &str = "distance_map within 0.6h + 8.3% of scan";

/// Compares the marching solver, run with `rule`, against the graph oracles
/// on seeded maps.
pub fn sandwich_campaign(cfg: &SandwichConfig, rule: UpdateRule) -> Result<CampaignReport, OracleError> {
    let mut upper8 = PropertyOutcome::new(UPPER_D8);
    let mut lower16 = PropertyOutcome::new(LOWER_D16);
    let mut upper4 = PropertyOutcome::new(UPPER_D4);
    let mut euclid = PropertyOutcome::new(LOWER_EUCLID);
    let mut support = PropertyOutcome::new(SUPPORT);
    let mut scan = PropertyOutcome::new(DISTANCE_SCAN);

    for trial in 0..cfg.trials {
        let seed = cfg.seed.wrapping_add(trial as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let domain = match &cfg.maps {
            CampaignMaps::Random { size, obstacle_fraction } => {
                OccupancyGrid::from_fn(*size, *size, 1.0, |_| {
                    if rng.gen_bool(*obstacle_fraction) {
                        Cell::Occupied
                    } else {
                        Cell::Free
                    }
                })?
            }
            CampaignMaps::Fixed(g) => g.clone(),
        };
        let h = domain.cell_size();
        let (lo, hi) = cfg.speed_range;
        let speeds: Vec<f64> = (0..domain.len())
            .map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
            .collect();
        let speed = ScalarField::from_values(domain.width(), domain.height(), h, speeds)?;
        let v_max = speed.values().iter().copied().fold(0.0, f64::max);
        let free: Vec<GridIndex> = (0..domain.len()).map(|k| domain.unflat(k)).filter(|&c| domain.is_free(c)).collect();
        if free.is_empty() {
            continue;
        }
        let center = GridIndex::new(domain.height() / 2, domain.width() / 2);
        let source = if trial == 0 && domain.is_free(center) {
            center
        } else {
            free[rng.gen_range(0..free.len())]
        };

        let t = fmm_solve_with(&domain, &speed, &SourceSet::single(source), rule)?;
        let d4 = dijkstra_time(&domain, &speed, source, GraphMetric::Four)?;
        let d8 = dijkstra_time(&domain, &speed, source, GraphMetric::Eight)?;
        let d16 = dijkstra_time(&domain, &speed, source, GraphMetric::Sixteen)?;
        let reach = reachable_mask(&domain, source);
        let origin = domain.center(source);

        for k in 0..domain.len() {
            let c = domain.unflat(k);
            let tf = t.values()[k];
            support.check(tf.is_finite() == reach[k], 0.0, seed, c, || {
                format!("fmm {tf}, reachable {}", reach[k])
            });
            if !reach[k] || !tf.is_finite() {
                continue;
            }
            let r = origin.distance(&domain.center(c));
            let t8 = d8.values()[k];
            upper8.check(tf <= t8 + 1e-9, tf - t8, seed, c, || format!("fmm {tf} > dijkstra8 {t8}"));
            let t4 = d4.values()[k];
            upper4.check(tf <= t4 + 1e-9, tf - t4, seed, c, || format!("fmm {tf} > dijkstra4 {t4}"));
            let bound = r / v_max;
            euclid.check(tf >= bound - 1e-9, bound - tf, seed, c, || {
                format!("fmm {tf} < straight-line bound {bound}")
            });
            if r > 0.0 {
                let t16 = d16.values()[k];
                let cap = tf * (1.0 + 0.6 * h / r + 0.03);
                lower16.check(t16 <= cap, (t16 - cap) / tf, seed, c, || {
                    format!("dijkstra16 {t16} > {cap} (fmm {tf}, r {r})")
                });
            }
        }

        if domain.has_obstacles() {
            let d = distance_map(&domain).map_err(|e| match e {
                crate::velocity::VelocityError::Eikonal(e) => OracleError::Eikonal(e),
                _ => OracleError::NoObstacles,
            })?;
            let exact = nearest_obstacle_scan(&domain)?;
            for k in 0..domain.len() {
                if !domain.cells()[k].is_free() {
                    continue;
                }
                let c = domain.unflat(k);
                let (df, ds) = (d.values()[k], exact.values()[k]);
                let tol = 0.6 * h + 0.083 * ds;
                scan.check((df - ds).abs() <= tol, (df - ds).abs() - tol, seed, c, || {
                    format!("distance_map {df} vs scan {ds}")
                });
            }
        }
    }
    Ok(CampaignReport {
        properties: vec![upper8, lower16, upper4, euclid, support, scan],
    })
}

pub const FIRST_ORDER: &str = "cone error halves with h (ratio in [1.5, 2.5])";
pub const CONE_BOUND: &str = "cone max error <= 0.6h at the finest grid";

/// Max error of a centered point source on a square grid spanning `[0, 1]`.
pub fn cone_error(cells: usize, rule: UpdateRule) -> Result<(f64, f64), OracleError> {
    let h = 1.0 / (cells - 1) as f64;
    let domain = OccupancyGrid::all_free(cells, cells, h)?;
    let speed = ScalarField::like(&domain, 1.0);
    let src = GridIndex::new(cells / 2, cells / 2);
    let t = fmm_solve_with(&domain, &speed, &SourceSet::single(src), rule)?;
    let o = domain.center(src);
    let err = (0..domain.len())
        .map(|k| (t.values()[k] - o.distance(&domain.center(domain.unflat(k)))).abs())
        .fold(0.0, f64::max);
    Ok((err, h))
}

/// Refinement study on odd grid sizes; each size must be one less than
/// twice the previous plus one, so `h` halves.
pub fn convergence_campaign(sizes: &[usize], rule: UpdateRule) -> Result<CampaignReport, OracleError> {
    let mut order = PropertyOutcome::new(FIRST_ORDER);
    let mut bound = PropertyOutcome::new(CONE_BOUND);
    let errors: Vec<(usize, f64, f64)> = sizes
        .iter()
        .map(|&n| cone_error(n, rule).map(|(e, h)| (n, e, h)))
        .collect::<Result<_, _>>()?;
    for w in errors.windows(2) {
        let ratio = w[0].1 / w[1].1;
        let cell = GridIndex::new(w[1].0 / 2, w[1].0 / 2);
        order.check((1.5..=2.5).contains(&ratio), ratio, 0, cell, || {
            format!("{} -> {} cells: error ratio {ratio:.4}", w[0].0, w[1].0)
        });
    }
    if let Some(&(n, e, h)) = errors.last() {
        bound.check(e <= 0.6 * h, e / h - 0.6, 0, GridIndex::new(n / 2, n / 2), || {
            format!("{n} cells: max error {:.4} h", e / h)
        });
    }
    Ok(CampaignReport {
        properties: vec![order, bound],
    })
}

/// The update rule used by the solver, for callers that want to be explicit.
pub const EXACT_RULE: UpdateRule = upwind;

/// Deliberately wrong rule for negative controls: half the true step.
pub fn corrupted_rule(a: f64, b: f64, hf: f64) -> f64 {
    a.min(b) + 0.5 * hf
}
