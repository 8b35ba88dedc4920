//! Interval-based online replanning for a single agent whose target and
//! surroundings change at known times.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eikonal::{fmm_solve, SourceSet};
use crate::grid::{Cell, ContinuousPoint, GridIndex, OccupancyGrid};
use crate::paths::{extract_path, DescentParams, PathError, PathPoint, TimedPath};
use crate::velocity::{agent_speed_map, AgentSpec, VelocityError};

#[derive(Debug, Error)]
pub enum ReplanError {
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
    #[error("event {index}: time {time} is not a positive multiple of the time step {dt}")]
    OffGrid { index: usize, time: f64, dt: f64 },
    #[error("event {index}: time {time} does not come after the previous event")]
    Unsorted { index: usize, time: f64 },
    #[error("event {index}: cell {cell} is outside the map")]
    EditOutOfBounds { index: usize, cell: GridIndex },
    #[error("target ({}, {}) is outside the map", at.x, at.y)]
    TargetOutOfBounds { at: ContinuousPoint },
    #[error("interval {interval}: target is unreachable")]
    TargetUnreachable { interval: usize },
    #[error("interval {interval}: no free cell near the agent at {cell}")]
    Trapped { interval: usize, cell: GridIndex },
    #[error("empty path")]
    EmptyPath,
    #[error("negative duration {0}")]
    NegativeDuration(f64),
    #[error("interval {interval}: {source}")]
    Velocity {
        interval: usize,
        #[source]
        source: VelocityError,
    },
    #[error("interval {interval}: {source}")]
    Path {
        interval: usize,
        #[source]
        source: PathError,
    },
}

/// Changes observed at `time`: cell toggles and an optional new target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplanEvent {
    pub time: f64,
    #[serde(default)]
    pub set_occupied: Vec<GridIndex>,
    #[serde(default)]
    pub set_free: Vec<GridIndex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ContinuousPoint>,
}

/// Where the agent is after `duration` seconds along `path`.
pub fn advance(path: &TimedPath, duration: f64) -> Result<ContinuousPoint, ReplanError> {
    if !(duration >= 0.0) {
        return Err(ReplanError::NegativeDuration(duration));
    }
    let pts = path.points();
    let first = pts.first().ok_or(ReplanError::EmptyPath)?;
    if duration <= first.time {
        return Ok(first.point);
    }
    // Last sample reached by `duration`.
    let k = pts.partition_point(|p| p.time <= duration);
    if k >= pts.len() {
        return Ok(pts[pts.len() - 1].point);
    }
    let (a, b) = (pts[k - 1], pts[k]);
    let frac = (duration - a.time) / (b.time - a.time);
    Ok(a.point.lerp(&b.point, frac))
}

/// The part of `path` covered in the first `duration` seconds.
fn truncate(path: &TimedPath, duration: f64) -> Result<TimedPath, ReplanError> {
    let mut out: Vec<PathPoint> = path.points().iter().take_while(|p| p.time <= duration).copied().collect();
    if out.len() < path.len() {
        out.push(PathPoint {
            point: advance(path, duration)?,
            time: duration,
        });
    }
    Ok(TimedPath::new(out))
}

#[derive(Debug, Clone)]
pub struct OnlineTask {
    pub map: OccupancyGrid,
    pub agent: AgentSpec,
    pub target: ContinuousPoint,
    pub descent: DescentParams,
    /// Cells within this many cells of a newly occupied cell are blocked too.
    pub dilation: usize,
}

/// One planning interval. `planned` is the full path computed at the start
/// of the interval; `traveled` is the part actually driven, on the global clock.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub interval: [f64; 2],
    pub start: GridIndex,
    pub target: ContinuousPoint,
    pub planned: TimedPath,
    pub traveled: TimedPath,
    #[serde(skip)]
    pub map: OccupancyGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplanTrace {
    pub segments: Vec<Segment>,
    pub stitched: TimedPath,
    pub warnings: Vec<String>,
}

fn validate(task: &OnlineTask, events: &[ReplanEvent], dt: f64) -> Result<(), ReplanError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ReplanError::BadStep(dt));
    }
    if !task.map.in_bounds(task.target) {
        return Err(ReplanError::TargetOutOfBounds { at: task.target });
    }
    let mut prev = 0.0;
    for (index, e) in events.iter().enumerate() {
        let steps = e.time / dt;
        if !(e.time > 0.0) || (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(ReplanError::OffGrid { index, time: e.time, dt });
        }
        if e.time <= prev {
            return Err(ReplanError::Unsorted { index, time: e.time });
        }
        prev = e.time;
        for &cell in e.set_occupied.iter().chain(&e.set_free) {
            if !task.map.contains(cell) {
                return Err(ReplanError::EditOutOfBounds { index, cell });
            }
        }
        if let Some(t) = e.target {
            if !task.map.in_bounds(t) {
                return Err(ReplanError::TargetOutOfBounds { at: t });
            }
        }
    }
    Ok(())
}

fn dilate(map: &OccupancyGrid, seeds: &BTreeSet<GridIndex>, radius: usize) -> OccupancyGrid {
    if radius == 0 || seeds.is_empty() {
        return map.clone();
    }
    let r = radius as isize;
    let mut edits = Vec::new();
    for s in seeds {
        for di in -r..=r {
            for dj in -r..=r {
                if di * di + dj * dj > r * r {
                    continue;
                }
                if let (Some(i), Some(j)) = (s.i.checked_add_signed(di), s.j.checked_add_signed(dj)) {
                    let c = GridIndex::new(i, j);
                    if map.contains(c) {
                        edits.push((c, Cell::Occupied));
                    }
                }
            }
        }
    }
    map.with_cells(&edits).expect("edits are in bounds")
}

fn plan_interval(
    interval: usize,
    map: &OccupancyGrid,
    agent: &AgentSpec,
    target: ContinuousPoint,
    descent: &DescentParams,
) -> Result<TimedPath, ReplanError> {
    let profile = agent_speed_map(map, agent).map_err(|source| ReplanError::Velocity { interval, source })?;
    let t = fmm_solve(&profile.domain, &profile.speed, &SourceSet::single(agent.start))
        .map_err(|e| ReplanError::Velocity {
            interval,
            source: e.into(),
        })?;
    let goal = map.cell_at(target).ok_or(ReplanError::TargetOutOfBounds { at: target })?;
    if !t.get(goal).is_finite() {
        return Err(ReplanError::TargetUnreachable { interval });
    }
    extract_path(&t, agent.start, target, descent).map_err(|source| ReplanError::Path { interval, source })
}

/// Plans from the agent's start, then at every event applies the edits,
/// moves the agent to where it is at that time and plans again. The last
/// interval runs until the target is reached.
pub fn run_online(task: &OnlineTask, events: &[ReplanEvent], dt: f64) -> Result<ReplanTrace, ReplanError> {
    validate(task, events, dt)?;
    let mut raw_map = task.map.clone();
    let mut moving: BTreeSet<GridIndex> = BTreeSet::new();
    let mut map = task.map.clone();
    let mut agent = task.agent.clone();
    let mut target = task.target;
    let mut now = 0.0;
    let mut segments = Vec::new();
    let mut stitched: Vec<PathPoint> = Vec::new();
    let mut warnings = Vec::new();

    for interval in 0..=events.len() {
        let planned = plan_interval(interval, &map, &agent, target, &task.descent)?;
        let end = events.get(interval).map(|e| e.time);
        let local = match end {
            Some(t1) => truncate(&planned, t1 - now)?,
            None => planned.clone(),
        };
        let traveled = TimedPath::new(
            local
                .points()
                .iter()
                .map(|p| PathPoint {
                    point: p.point,
                    time: now + p.time,
                })
                .collect(),
        );
        let skip = usize::from(!stitched.is_empty() && stitched.last().map(|p| p.point) == traveled.first().map(|p| p.point));
        stitched.extend_from_slice(&traveled.points()[skip..]);
        segments.push(Segment {
            interval: [now, end.unwrap_or(now + planned.total_time())],
            start: agent.start,
            target,
            planned,
            traveled,
            map: map.clone(),
        });

        let Some(event) = events.get(interval) else { break };
        let position = stitched.last().expect("segments are non-empty").point;
        now = event.time;
        let mut edits: Vec<(GridIndex, Cell)> = event.set_occupied.iter().map(|&c| (c, Cell::Occupied)).collect();
        edits.extend(event.set_free.iter().map(|&c| (c, Cell::Free)));
        raw_map = raw_map.with_cells(&edits).expect("edits validated");
        moving.extend(event.set_occupied.iter().copied());
        for c in &event.set_free {
            moving.remove(c);
        }
        map = dilate(&raw_map, &moving, task.dilation);
        if let Some(t) = event.target {
            target = t;
        }

        let here = map.cell_at(position).expect("paths stay inside the map");
        let domain = agent.domain.apply(&map);
        agent.start = if domain.is_free(here) {
            here
        } else {
            let moved = domain
                .nearest_free(here, map.width().max(map.height()))
                .ok_or(ReplanError::Trapped { interval, cell: here })?;
            warnings.push(format!(
                "t = {now}: agent cell {here} became occupied; resuming from {moved}"
            ));
            moved
        };
    }

    Ok(ReplanTrace {
        segments,
        stitched: TimedPath::new(stitched),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::velocity::{DomainSelector, VelocityLaw};

    fn line(n: usize, speed: f64) -> TimedPath {
        TimedPath::new(
            (0..=n)
                .map(|k| PathPoint {
                    point: ContinuousPoint::new(k as f64 * 0.5, 0.0),
                    time: k as f64 * 0.5 / speed,
                })
                .collect(),
        )
    }

    #[test]
    fn advance_basics() {
        let p = line(20, 2.0);
        assert_eq!(advance(&p, 0.0).unwrap(), ContinuousPoint::new(0.0, 0.0));
        assert_eq!(advance(&p, 99.0).unwrap(), ContinuousPoint::new(10.0, 0.0));
        let mid = advance(&p, p.total_time() / 2.0).unwrap();
        assert!((mid.x - 5.0).abs() <= 0.5);
        assert!((advance(&p, 1.1).unwrap().x - 2.2).abs() < 1e-12);
        assert!(matches!(advance(&TimedPath::default(), 1.0), Err(ReplanError::EmptyPath)));
        assert!(matches!(advance(&p, -1.0), Err(ReplanError::NegativeDuration(_))));
    }

    fn task(map: OccupancyGrid, start: GridIndex, target: ContinuousPoint) -> OnlineTask {
        OnlineTask {
            map,
            agent: AgentSpec {
                id: "r".into(),
                start,
                law: VelocityLaw::Exponential { alpha: 3.0, v_max: 1.0 },
                domain: DomainSelector::Normal,
            },
            target,
            descent: DescentParams::default(),
            dilation: 0,
        }
    }

    fn walled() -> OccupancyGrid {
        OccupancyGrid::from_fn(30, 20, 1.0, |c| {
            if (c.i == 0 || c.i == 19 || c.j == 0 || c.j == 29) || (c.j == 15 && c.i < 17) {
                Cell::Occupied
            } else {
                Cell::Free
            }
        })
        .unwrap()
    }

    #[test]
    fn no_events_matches_one_shot() {
        let t = task(walled(), GridIndex::new(3, 3), ContinuousPoint::new(26.0, 3.0));
        let trace = run_online(&t, &[], 10.0).unwrap();
        let one = plan_interval(0, &t.map, &t.agent, t.target, &t.descent).unwrap();
        assert_eq!(trace.segments.len(), 1);
        assert_eq!(trace.stitched, one);
        assert!(trace.warnings.is_empty());
    }

    #[test]
    fn opening_the_wall_shortens_the_trip() {
        let t = task(walled(), GridIndex::new(3, 3), ContinuousPoint::new(26.0, 3.0));
        let opening: Vec<GridIndex> = (1..17).map(|i| GridIndex::new(i, 15)).collect();
        let events = vec![ReplanEvent {
            time: 4.0,
            set_occupied: vec![],
            set_free: opening,
            target: None,
        }];
        let trace = run_online(&t, &events, 2.0).unwrap();
        assert_eq!(trace.segments.len(), 2);
        let first = &trace.segments[0];
        let remaining = first.planned.total_time() - 4.0;
        let second = trace.segments[1].planned.total_time();
        assert!(second < remaining, "{second} vs {remaining}");
        assert!(trace.stitched.is_time_monotone(1e-9));
        let gap = first
            .traveled
            .last()
            .unwrap()
            .point
            .distance(&trace.segments[1].traveled.first().unwrap().point);
        assert!(gap <= 1.0);
    }

    #[test]
    fn occupied_position_is_flagged() {
        let map = OccupancyGrid::all_free(20, 8, 1.0).unwrap();
        let t = task(map, GridIndex::new(4, 1), ContinuousPoint::new(18.0, 4.0));
        // Block a column where the agent will be at t = 4.
        let column: Vec<GridIndex> = (0..8).filter(|&i| i != 7).map(|i| GridIndex::new(i, 5)).collect();
        let events = vec![ReplanEvent {
            time: 4.0,
            set_occupied: column,
            set_free: vec![],
            target: Some(ContinuousPoint::new(17.0, 1.0)),
        }];
        let trace = run_online(&t, &events, 1.0).unwrap();
        assert_eq!(trace.warnings.len(), 1, "{:?}", trace.warnings);
        let last = trace.stitched.last().unwrap().point;
        assert_eq!(last, ContinuousPoint::new(17.0, 1.0));
        for p in trace.segments[1].planned.points() {
            assert!(trace.segments[1].map.is_free(trace.segments[1].map.cell_at(p.point).unwrap()));
        }
    }

    #[test]
    fn dilation_blocks_neighbors() {
        let map = OccupancyGrid::all_free(9, 9, 1.0).unwrap();
        let d = dilate(&map, &[GridIndex::new(4, 4)].into_iter().collect(), 1);
        assert_eq!(map.len() - d.free_count(), 5);
        assert!(!d.is_free(GridIndex::new(3, 4)) && d.is_free(GridIndex::new(3, 3)));
    }

    #[test]
    fn schedule_validation() {
        let t = task(walled(), GridIndex::new(3, 3), ContinuousPoint::new(26.0, 3.0));
        let ev = |time| ReplanEvent {
            time,
            set_occupied: vec![],
            set_free: vec![],
            target: None,
        };
        assert!(matches!(run_online(&t, &[], 0.0), Err(ReplanError::BadStep(_))));
        assert!(matches!(run_online(&t, &[ev(3.0)], 2.0), Err(ReplanError::OffGrid { .. })));
        assert!(matches!(run_online(&t, &[ev(4.0), ev(2.0)], 2.0), Err(ReplanError::Unsorted { .. })));
        let mut bad = ev(2.0);
        bad.set_free.push(GridIndex::new(50, 0));
        assert!(matches!(run_online(&t, &[bad], 2.0), Err(ReplanError::EditOutOfBounds { .. })));
        let sealed = ReplanEvent {
            time: 2.0,
            set_occupied: (1..19).map(|i| GridIndex::new(i, 20)).collect(),
            set_free: vec![],
            target: None,
        };
        assert!(matches!(
            run_online(&t, &[sealed], 2.0),
            Err(ReplanError::TargetUnreachable { interval: 1 })
        ));
    }

    #[test]
    fn event_json_shape() {
        let e: ReplanEvent =
            serde_json::from_str(r#"{"time":200,"set_occupied":[[1,2]],"set_free":[],"target":[3.5,4]}"#).unwrap();
        assert_eq!(e.set_occupied, vec![GridIndex::new(1, 2)]);
        assert_eq!(e.target, Some(ContinuousPoint::new(3.5, 4.0)));
        let e: ReplanEvent = serde_json::from_str(r#"{"time":1}"#).unwrap();
        assert!(e.set_free.is_empty() && e.target.is_none());
    }
}
