//! Obstacle distance fields and the speed laws that turn them into
//! per-agent speed maps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eikonal::{fmm_solve, EikonalError, ScalarField, SourceSet};
use crate::grid::{Cell, GridIndex, OccupancyGrid};

#[derive(Debug, Error, PartialEq)]
pub enum VelocityError {
    #[error("domain has no free cells")]
    AllOccupied,
    #[error("maximum obstacle distance is zero; the speed law is degenerate")]
    DegenerateDistance,
    #[error("invalid velocity law: {0}")]
    InvalidLaw(String),
    #[error("agent {id}: start {start} is not free in its operating domain")]
    StartBlocked { id: String, start: GridIndex },
    #[error(transparent)]
    Eikonal(#[from] EikonalError),
}

/// Maps obstacle clearance to travel speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityLaw {
    /// `v_max * (1 - exp(-alpha * d / d_max))`.
    Exponential { alpha: f64, v_max: f64 },
    /// `v_max * d / d_max`.
    Linear { v_max: f64 },
    /// `v_max` on every free cell.
    Uniform { v_max: f64 },
}

impl VelocityLaw {
    pub fn v_max(&self) -> f64 {
        match *self {
            VelocityLaw::Exponential { v_max, .. } | VelocityLaw::Linear { v_max } | VelocityLaw::Uniform { v_max } => {
                v_max
            }
        }
    }

    pub fn validate(&self) -> Result<(), VelocityError> {
        let v = self.v_max();
        if !(v.is_finite() && v > 0.0) {
            return Err(VelocityError::InvalidLaw(format!("v_max must be positive, got {v}")));
        }
        if let VelocityLaw::Exponential { alpha, .. } = *self {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(VelocityError::InvalidLaw(format!("alpha must be positive, got {alpha}")));
            }
        }
        Ok(())
    }

    /// Speed at clearance `d` given the domain-wide maximum clearance `d_max`.
    pub fn speed_at(&self, d: f64, d_max: f64) -> f64 {
        match *self {
            VelocityLaw::Exponential { alpha, v_max } => v_max * (1.0 - (-alpha * (d / d_max)).exp()),
            VelocityLaw::Linear { v_max } => v_max * d / d_max,
            VelocityLaw::Uniform { v_max } => v_max,
        }
    }
}

/// Which version of the base map an agent moves in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSelector {
    /// The map as loaded.
    #[default]
    Normal,
    /// Free and occupied swapped (e.g. a ground vehicle on a water map).
    Inverted,
    /// No obstacles at all (e.g. an aerial vehicle).
    FreeSpace,
}

impl DomainSelector {
    pub fn apply(self, base: &OccupancyGrid) -> OccupancyGrid {
        match self {
            DomainSelector::Normal => base.clone(),
            DomainSelector::Inverted => base.invert(),
            DomainSelector::FreeSpace => OccupancyGrid::all_free(base.width(), base.height(), base.cell_size())
                .expect("dimensions come from a valid grid"),
        }
    }
}

/// One vehicle of a heterogeneous team.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    pub start: GridIndex,
    pub law: VelocityLaw,
    #[serde(default)]
    pub domain: DomainSelector,
}

/// Everything derived from one agent's view of the map.
#[derive(Debug, Clone)]
pub struct SpeedProfile {
    pub domain: OccupancyGrid,
    /// Obstacle clearance; `None` when the domain has no obstacles.
    pub distance: Option<ScalarField>,
    pub speed: ScalarField,
}

/// Clearance from every cell to the nearest obstacle boundary, measured by
/// a unit-speed front started on all boundary cells at once. Occupied cells
/// get 0. A domain without obstacles gets the map diagonal everywhere.
pub fn distance_map(domain: &OccupancyGrid) -> Result<ScalarField, VelocityError> {
    if domain.free_count() == 0 {
        return Err(VelocityError::AllOccupied);
    }
    let boundary = domain.boundary_cells();
    if boundary.is_empty() {
        let h = domain.cell_size();
        let diag = ((domain.width() - 1) as f64 * h).hypot((domain.height() - 1) as f64 * h);
        return Ok(ScalarField::like(domain, diag));
    }
    let edits: Vec<(GridIndex, Cell)> = boundary.iter().map(|&c| (c, Cell::Free)).collect();
    let opened = domain.with_cells(&edits).expect("boundary cells are in bounds");
    let sources = SourceSet::new(boundary.iter().copied())?;
    let mut d = fmm_solve(&opened, &ScalarField::like(domain, 1.0), &sources)?;
    for (v, cell) in d.values_mut().iter_mut().zip(domain.cells()) {
        if !cell.is_free() {
            *v = 0.0;
        }
    }
    Ok(d)
}

/// Applies `law` to a clearance field. Occupied cells always get 0.
pub fn speed_map(domain: &OccupancyGrid, d: &ScalarField, law: &VelocityLaw) -> Result<ScalarField, VelocityError> {
    law.validate()?;
    if !d.matches(domain) {
        return Err(EikonalError::DimensionMismatch {
            expected: (domain.width(), domain.height()),
            actual: d.dims(),
        }
        .into());
    }
    let d_max = d
        .values()
        .iter()
        .zip(domain.cells())
        .filter(|(v, c)| c.is_free() && v.is_finite())
        .map(|(v, _)| *v)
        .fold(0.0, f64::max);
    if d_max <= 0.0 && !matches!(law, VelocityLaw::Uniform { .. }) {
        return Err(VelocityError::DegenerateDistance);
    }
    let values = d
        .values()
        .iter()
        .zip(domain.cells())
        .map(|(&dv, c)| if c.is_free() && dv.is_finite() { law.speed_at(dv, d_max) } else { 0.0 })
        .collect();
    Ok(ScalarField::from_values(domain.width(), domain.height(), domain.cell_size(), values)?)
}

/// Builds the agent's effective domain and speed map. Obstacle-free domains
/// skip the clearance pass and move at `v_max` everywhere.
pub fn agent_speed_map(base: &OccupancyGrid, agent: &AgentSpec) -> Result<SpeedProfile, VelocityError> {
    agent.law.validate()?;
    let domain = agent.domain.apply(base);
    if !domain.is_free(agent.start) {
        return Err(VelocityError::StartBlocked {
            id: agent.id.clone(),
            start: agent.start,
        });
    }
    if !domain.has_obstacles() {
        let speed = ScalarField::like(&domain, agent.law.v_max());
        return Ok(SpeedProfile {
            domain,
            distance: None,
            speed,
        });
    }
    let distance = distance_map(&domain)?;
    let speed = speed_map(&domain, &distance, &agent.law)?;
    Ok(SpeedProfile {
        domain,
        distance: Some(distance),
        speed,
    })
}
