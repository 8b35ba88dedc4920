//! Synthetic maps and scenarios used by the benchmarks, the acceptance
//! suite and the sample data.
//!
//! Shapes are defined on the unit square (x right, y down) and rasterized
//! at a fixed base resolution; other sizes are nearest-neighbor resamples of
//! that raster, so every size has the same layout.

use crate::grid::{Cell, GridIndex, OccupancyGrid};
use crate::paths::DescentParams;
use crate::replan::{OnlineTask, ReplanEvent};
use crate::velocity::{AgentSpec, DomainSelector, VelocityLaw};

const BASE: usize = 256;

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disk { x: f64, y: f64, r: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => (x0..=x1).contains(&x) && (y0..=y1).contains(&y),
            Shape::Disk { x: cx, y: cy, r } => (x - cx).hypot(y - cy) <= r,
        }
    }
}

const fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Shape {
    Shape::Rect { x0, y0, x1, y1 }
}

const fn disk(x: f64, y: f64, r: f64) -> Shape {
    Shape::Disk { x, y, r }
}

const CLUTTER: [Shape; 10] = [
    rect(0.14, 0.18, 0.36, 0.27),
    rect(0.55, 0.08, 0.62, 0.44),
    disk(0.30, 0.64, 0.10),
    rect(0.46, 0.60, 0.86, 0.67),
    disk(0.76, 0.28, 0.07),
    rect(0.08, 0.44, 0.21, 0.50),
    rect(0.70, 0.79, 0.77, 0.95),
    disk(0.52, 0.86, 0.05),
    rect(0.38, 0.35, 0.47, 0.43),
    disk(0.90, 0.52, 0.04),
];

fn rasterize(size: usize, occupied: impl Fn(f64, f64) -> bool) -> OccupancyGrid {
    let base = OccupancyGrid::from_fn(BASE, BASE, 1.0, |c| {
        let x = (c.j as f64 + 0.5) / BASE as f64;
        let y = (c.i as f64 + 0.5) / BASE as f64;
        if occupied(x, y) {
            Cell::Occupied
        } else {
            Cell::Free
        }
    })
    .expect("base raster is valid");
    let g = if size == BASE {
        base
    } else {
        base.resample_nearest(size, size).expect("size is at least 2")
    };
    g.with_cell_size(1.0).expect("unit cells")
}

/// Cluttered square map with open corners, `size` cells on a side, unit cells.
pub fn reference_map(size: usize) -> OccupancyGrid {
    rasterize(size, |x, y| CLUTTER.iter().any(|s| s.contains(x, y)))
}

fn inset(size: usize) -> usize {
    (size / 25).max(1)
}

/// Three identical agents in the top-left, top-right and bottom-left corners.
pub fn corner_agents(size: usize, law: VelocityLaw) -> Vec<AgentSpec> {
    let (a, b) = (inset(size), size - 1 - inset(size));
    [("corner-nw", a, a), ("corner-ne", a, b), ("corner-sw", b, a)]
        .into_iter()
        .map(|(id, i, j)| AgentSpec {
            id: id.into(),
            start: GridIndex::new(i, j),
            law,
            domain: DomainSelector::Normal,
        })
        .collect()
}

/// `count` agents spaced evenly around the map's rim, each on the nearest
/// free cell to its slot.
pub fn rim_agents(map: &OccupancyGrid, count: usize, law: VelocityLaw) -> Vec<AgentSpec> {
    let n = map.width().min(map.height());
    let (lo, hi) = (inset(n), n - 1 - inset(n));
    let side = hi - lo;
    (0..count)
        .map(|k| {
            let s = (k * 4 * side) / count.max(1);
            let (i, j) = match s / side {
                0 => (lo, lo + s % side),
                1 => (lo + s % side, hi),
                2 => (hi, hi - s % side),
                _ => (hi - s % side, lo),
            };
            let start = map
                .nearest_free(GridIndex::new(i, j), n)
                .expect("reference maps have free space");
            AgentSpec {
                id: format!("agent-{k}"),
                start,
                law,
                domain: DomainSelector::Normal,
            }
        })
        .collect()
}

/// Water on the right (free in the base map), land on the left with a
/// wavy coast, a bay cutting into the land and an island offshore.
pub fn shoreline_map(size: usize) -> OccupancyGrid {
    rasterize(size, |x, y| {
        let coast = 0.42 + 0.06 * (y * std::f64::consts::TAU * 1.5).sin();
        let bay = (x - 0.30).hypot(y - 0.55) < 0.12;
        let island = (x - 0.72).hypot(y - 0.30) < 0.08;
        (x < coast && !bay) || island
    })
}

/// Underwater, surface, ground and aerial vehicles on [`shoreline_map`].
pub fn shoreline_agents(size: usize) -> Vec<AgentSpec> {
    let at = |fx: f64, fy: f64| GridIndex::new((fy * size as f64) as usize, (fx * size as f64) as usize);
    vec![
        AgentSpec {
            id: "uuv".into(),
            start: at(0.90, 0.85),
            law: VelocityLaw::Exponential { alpha: 100.0, v_max: 2.0 },
            domain: DomainSelector::Normal,
        },
        AgentSpec {
            id: "usv".into(),
            start: at(0.92, 0.12),
            law: VelocityLaw::Exponential { alpha: 3.0, v_max: 2.0 },
            domain: DomainSelector::Normal,
        },
        AgentSpec {
            id: "ugv".into(),
            start: at(0.10, 0.20),
            law: VelocityLaw::Exponential { alpha: 3.0, v_max: 1.0 },
            domain: DomainSelector::Inverted,
        },
        AgentSpec {
            id: "uav".into(),
            start: at(0.05, 0.95),
            law: VelocityLaw::Uniform { v_max: 3.0 },
            domain: DomainSelector::FreeSpace,
        },
    ]
}

/// Interval length of the moving-target schedule, seconds.
pub const MOVING_TARGET_DT: f64 = 200.0;

/// One agent chasing a target that moves twice while point obstacles shift,
/// on the reference map with 4 m cells.
pub fn moving_target(size: usize) -> (OnlineTask, Vec<ReplanEvent>) {
    let map = reference_map(size).with_cell_size(4.0).expect("positive");
    let cell = |fx: f64, fy: f64| GridIndex::new((fy * size as f64) as usize, (fx * size as f64) as usize);
    let point = |fx: f64, fy: f64| map.center(map.nearest_free(cell(fx, fy), size).expect("free space"));
    let start = map.nearest_free(cell(0.06, 0.06), size).expect("free corner");
    let first_crosses = [cell(0.40, 0.55), cell(0.68, 0.50), cell(0.82, 0.75)];
    let second_crosses = [cell(0.44, 0.52), cell(0.64, 0.55), cell(0.85, 0.70)];
    let third_crosses = [cell(0.48, 0.50), cell(0.60, 0.58), cell(0.88, 0.66)];
    let task = OnlineTask {
        map: map.with_cells(&first_crosses.map(|c| (c, Cell::Occupied))).expect("in bounds"),
        agent: AgentSpec {
            id: "chaser".into(),
            start,
            law: VelocityLaw::Exponential { alpha: 3.0, v_max: 1.0 },
            domain: DomainSelector::Normal,
        },
        target: point(0.93, 0.90),
        descent: DescentParams::default(),
        dilation: 0,
    };
    let events = vec![
        ReplanEvent {
            time: MOVING_TARGET_DT,
            set_free: first_crosses.to_vec(),
            set_occupied: second_crosses.to_vec(),
            target: Some(point(0.80, 0.95)),
        },
        ReplanEvent {
            time: 2.0 * MOVING_TARGET_DT,
            set_free: second_crosses.to_vec(),
            set_occupied: third_crosses.to_vec(),
            target: Some(point(0.94, 0.62)),
        },
    ];
    (task, events)
}
