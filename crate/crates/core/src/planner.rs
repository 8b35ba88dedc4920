//! Multi-agent rendezvous: per-agent arrival fields, the max-arrival cost
//! field, the minimax meeting cell and each agent's path to it.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eikonal::{fmm_solve, EikonalError, ScalarField, SourceSet, UNREACHED};
use crate::grid::{Connectivity, ContinuousPoint, GridIndex, OccupancyGrid};
use crate::paths::{extract_path, DescentParams, PathError, PathPoint, TimedPath};
use crate::velocity::{agent_speed_map, AgentSpec, SpeedProfile, VelocityError};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("N ≥ 2 required, got {0} agent(s)")]
    TooFewAgents(usize),
    #[error("duplicate agent id {id:?}")]
    DuplicateId { index: usize, id: String },
    #[error("agent {id:?}: start {start} is outside the {width}x{height} map")]
    StartOutOfBounds {
        index: usize,
        id: String,
        start: GridIndex,
        width: usize,
        height: usize,
    },
    #[error("agent {id:?}: {source}")]
    Agent {
        index: usize,
        id: String,
        #[source]
        source: VelocityError,
    },
    #[error("no time fields given")]
    NoFields,
    #[error("no common reachable rendezvous")]
    NoRendezvous,
    #[error("agent {id:?}: path extraction failed: {source}")]
    Path {
        id: String,
        #[source]
        source: PathError,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
}

impl PlanError {
    /// JSON pointer into the scenario document for configuration errors.
    pub fn pointer(&self) -> Option<String> {
        match self {
            PlanError::TooFewAgents(_) => Some("/agents".into()),
            PlanError::DuplicateId { index, .. } => Some(format!("/agents/{index}/id")),
            PlanError::StartOutOfBounds { index, .. } => Some(format!("/agents/{index}/start")),
            PlanError::Agent { index, source, .. } => Some(match source {
                VelocityError::InvalidLaw(_) => format!("/agents/{index}/law"),
                VelocityError::StartBlocked { .. } => format!("/agents/{index}/start"),
                _ => format!("/agents/{index}"),
            }),
            _ => None,
        }
    }

    /// True for errors caused by the scenario itself rather than by the
    /// planning problem having no solution.
    pub fn is_config(&self) -> bool {
        self.pointer().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanOptions {
    pub descent: DescentParams,
    /// Worker cap; `Some(1)` runs everything on the calling thread.
    pub threads: Option<usize>,
}

/// A validated planning problem.
#[derive(Debug, Clone)]
pub struct Scenario {
    base_map: OccupancyGrid,
    agents: Vec<AgentSpec>,
    boundary_rendezvous: bool,
    pub options: PlanOptions,
}

impl Scenario {
    pub fn new(base_map: OccupancyGrid, agents: Vec<AgentSpec>, boundary_rendezvous: bool) -> Result<Self, PlanError> {
        if agents.len() < 2 {
            return Err(PlanError::TooFewAgents(agents.len()));
        }
        let mut seen = HashSet::new();
        for (index, a) in agents.iter().enumerate() {
            if !seen.insert(a.id.as_str()) {
                return Err(PlanError::DuplicateId {
                    index,
                    id: a.id.clone(),
                });
            }
            if !base_map.contains(a.start) {
                return Err(PlanError::StartOutOfBounds {
                    index,
                    id: a.id.clone(),
                    start: a.start,
                    width: base_map.width(),
                    height: base_map.height(),
                });
            }
            let agent_err = |source| PlanError::Agent {
                index,
                id: a.id.clone(),
                source,
            };
            a.law.validate().map_err(agent_err)?;
            if !a.domain.apply(&base_map).is_free(a.start) {
                return Err(agent_err(VelocityError::StartBlocked {
                    id: a.id.clone(),
                    start: a.start,
                }));
            }
        }
        Ok(Self {
            base_map,
            agents,
            boundary_rendezvous,
            options: PlanOptions::default(),
        })
    }

    pub fn with_options(mut self, options: PlanOptions) -> Self {
        self.options = options;
        self
    }

    pub fn base_map(&self) -> &OccupancyGrid {
        &self.base_map
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn boundary_rendezvous(&self) -> bool {
        self.boundary_rendezvous
    }
}

/// First-arrival times from the agent's start over its own speed map.
pub fn arrival_map(agent: &AgentSpec, base: &OccupancyGrid) -> Result<ScalarField, VelocityError> {
    let profile = agent_speed_map(base, agent)?;
    arrival_on(&profile, agent.start)
}

fn arrival_on(profile: &SpeedProfile, start: GridIndex) -> Result<ScalarField, VelocityError> {
    Ok(fmm_solve(&profile.domain, &profile.speed, &SourceSet::single(start))?)
}

/// Copies `t` and gives every boundary cell of `domain` the smallest finite
/// time among its free 4-neighbors.
pub fn extend_to_boundary(t: &ScalarField, domain: &OccupancyGrid) -> ScalarField {
    let mut out = t.clone();
    for c in domain.boundary_cells() {
        let best = domain
            .free_neighbors(c, Connectivity::Four)
            .into_iter()
            .map(|n| t.get(n))
            .filter(|v| v.is_finite())
            .fold(UNREACHED, f64::min);
        out.set(c, best);
    }
    out
}

/// Pointwise maximum of the agents' time fields, finite only where every
/// agent can arrive.
#[derive(Debug, Clone)]
pub struct CostField {
    values: ScalarField,
    support: Vec<bool>,
}

impl CostField {
    pub fn values(&self) -> &ScalarField {
        &self.values
    }

    pub fn in_support(&self, c: GridIndex) -> bool {
        self.support[c.i * self.values.width() + c.j]
    }

    pub fn support_len(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }

    /// Supported cells in row-major order.
    pub fn support(&self) -> impl Iterator<Item = GridIndex> + '_ {
        let w = self.values.width();
        self.support
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(move |(k, _)| GridIndex::new(k / w, k % w))
    }
}

pub fn cost_field(time_maps: &[ScalarField]) -> Result<CostField, PlanError> {
    let first = time_maps.first().ok_or(PlanError::NoFields)?;
    if time_maps.len() == 1 {
        log::warn!("cost field over a single agent is that agent's own time field");
    }
    for m in &time_maps[1..] {
        if m.dims() != first.dims() {
            return Err(EikonalError::DimensionMismatch {
                expected: first.dims(),
                actual: m.dims(),
            }
            .into());
        }
    }
    let mut values = first.clone();
    for m in &time_maps[1..] {
        for (v, &o) in values.values_mut().iter_mut().zip(m.values()) {
            *v = if v.is_finite() && o.is_finite() { v.max(o) } else { UNREACHED };
        }
    }
    let support = values.values().iter().map(|v| v.is_finite()).collect();
    Ok(CostField { values, support })
}

/// The supported cell with the smallest cost; ties go to the smallest `(i, j)`.
pub fn find_rendezvous(cost: &CostField) -> Result<(GridIndex, f64), PlanError> {
    let w = cost.values.width();
    let mut best: Option<(usize, f64)> = None;
    for (k, (&v, &s)) in cost.values.values().iter().zip(&cost.support).enumerate() {
        if s && best.is_none_or(|(_, b)| v < b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, v)| (GridIndex::new(k / w, k % w), v))
        .ok_or(PlanError::NoRendezvous)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRoute {
    pub id: String,
    pub arrival_time: f64,
    pub path: TimedPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RendezvousSolution {
    pub meeting_cell: GridIndex,
    pub meeting_point: ContinuousPoint,
    pub meeting_time: f64,
    pub agents: Vec<AgentRoute>,
}

/// Intermediate fields of one agent, kept for dumps and diagnostics.
#[derive(Debug, Clone)]
pub struct AgentFields {
    pub profile: SpeedProfile,
    pub arrival: ScalarField,
    /// Present when boundary rendezvous is enabled.
    pub extended: Option<ScalarField>,
}

impl AgentFields {
    /// The field entering the cost: extended when available.
    pub fn effective(&self) -> &ScalarField {
        self.extended.as_ref().unwrap_or(&self.arrival)
    }
}

#[derive(Debug, Clone)]
pub struct PlanArtifacts {
    pub agents: Vec<AgentFields>,
    pub cost: CostField,
}

pub fn plan(scenario: &Scenario) -> Result<RendezvousSolution, PlanError> {
    plan_detailed(scenario).map(|(s, _)| s)
}

/// Runs `f` over `0..n` on the configured number of workers, preserving order.
fn per_agent<T: Send>(
    threads: Option<usize>,
    n: usize,
    f: impl Fn(usize) -> T + Sync + Send,
) -> Result<Vec<T>, PlanError> {
    match threads {
        Some(1) => Ok((0..n).map(f).collect()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| PlanError::ThreadPool(e.to_string()))?;
            Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
        }
        None => Ok((0..n).into_par_iter().map(f).collect()),
    }
}

pub fn plan_detailed(scenario: &Scenario) -> Result<(RendezvousSolution, PlanArtifacts), PlanError> {
    let agents = &scenario.agents;
    let threads = scenario.options.threads;
    let fields = per_agent(threads, agents.len(), |k| -> Result<AgentFields, PlanError> {
        let a = &agents[k];
        let wrap = |source| PlanError::Agent {
            index: k,
            id: a.id.clone(),
            source,
        };
        let profile = agent_speed_map(&scenario.base_map, a).map_err(wrap)?;
        let arrival = arrival_on(&profile, a.start).map_err(wrap)?;
        let extended = scenario
            .boundary_rendezvous
            .then(|| extend_to_boundary(&arrival, &profile.domain));
        Ok(AgentFields {
            profile,
            arrival,
            extended,
        })
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let effective: Vec<ScalarField> = fields.iter().map(|f| f.effective().clone()).collect();
    let cost = cost_field(&effective)?;
    let (meeting_cell, meeting_time) = find_rendezvous(&cost)?;
    let meeting_point = scenario.base_map.center(meeting_cell);
    log::info!("rendezvous at {meeting_cell}, time {meeting_time:.3}");

    let descent = scenario.options.descent;
    let routes = per_agent(threads, agents.len(), |k| {
        route_to(&agents[k], &fields[k], meeting_cell, &descent)
    })?
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    Ok((
        RendezvousSolution {
            meeting_cell,
            meeting_point,
            meeting_time,
            agents: routes,
        },
        PlanArtifacts { agents: fields, cost },
    ))
}

fn route_to(
    agent: &AgentSpec,
    fields: &AgentFields,
    meeting: GridIndex,
    descent: &DescentParams,
) -> Result<AgentRoute, PlanError> {
    let domain = &fields.profile.domain;
    let t = &fields.arrival;
    let arrival_time = fields.effective().get(meeting);
    let path_err = |source| PlanError::Path {
        id: agent.id.clone(),
        source,
    };
    let path = if domain.is_free(meeting) {
        extract_path(t, agent.start, domain.center(meeting), descent).map_err(path_err)?
    } else {
        // Meeting on the far side of this agent's shoreline: walk to the
        // best free neighbor, then straight onto the meeting cell.
        let landing = domain
            .free_neighbors(meeting, Connectivity::Four)
            .into_iter()
            .filter(|&n| t.get(n).is_finite())
            .min_by(|&a, &b| t.get(a).total_cmp(&t.get(b)).then(a.cmp(&b)))
            .ok_or(PlanError::NoRendezvous)?;
        let mut path = extract_path(t, agent.start, domain.center(landing), descent).map_err(path_err)?;
        let from = domain.center(landing);
        let to = domain.center(meeting);
        let step = descent.step_fraction * domain.cell_size();
        let n = (from.distance(&to) / step).ceil().max(1.0) as usize;
        let time = arrival_time.max(path.total_time());
        for k in 1..=n {
            path.push(PathPoint {
                point: from.lerp(&to, k as f64 / n as f64),
                time,
            });
        }
        path
    };
    Ok(AgentRoute {
        id: agent.id.clone(),
        arrival_time,
        path,
    })
}
