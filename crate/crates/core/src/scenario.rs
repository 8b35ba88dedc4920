//! Scenario documents: JSON on disk, a PGM map next to it.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{ContinuousPoint, OccupancyGrid, PgmError};
use crate::planner::{PlanError, Scenario};
use crate::velocity::AgentSpec;

pub const DEFAULT_THRESHOLD: u8 = 127;

/// A JSON document that did not match the expected shape.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("at {pointer}: {message}")]
pub struct SchemaError {
    /// JSON pointer to the offending value; empty for the document root.
    pub pointer: String,
    pub message: String,
}

/// Deserializes `text`, reporting failures with a JSON pointer.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut pointer = String::new();
        for seg in e.path().iter() {
            use serde_path_to_error::Segment;
            match seg {
                Segment::Seq { index } => pointer.push_str(&format!("/{index}")),
                Segment::Map { key } => {
                    pointer.push('/');
                    pointer.push_str(&key.replace('~', "~0").replace('/', "~1"));
                }
                Segment::Enum { .. } | Segment::Unknown => {}
            }
        }
        SchemaError {
            pointer,
            message: e.into_inner().to_string(),
        }
    })
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Schema {
        path: PathBuf,
        #[source]
        source: SchemaError,
    },
    #[error("map {}: {source}", path.display())]
    Map {
        path: PathBuf,
        #[source]
        source: PgmError,
    },
    #[error("invalid cell_size {0}")]
    CellSize(f64),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

impl ScenarioError {
    pub fn pointer(&self) -> Option<String> {
        match self {
            ScenarioError::Schema { source, .. } => Some(source.pointer.clone()),
            ScenarioError::Map { .. } => Some("/map".into()),
            ScenarioError::CellSize(_) => Some("/cell_size".into()),
            ScenarioError::Plan(e) => e.pointer(),
            ScenarioError::Io { .. } => None,
        }
    }
}

fn default_threshold() -> u8 {
    DEFAULT_THRESHOLD
}

fn default_cell_size() -> f64 {
    1.0
}

/// On-disk scenario. `map` is resolved against the scenario file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub map: PathBuf,
    #[serde(default = "default_threshold")]
    pub threshold: u8,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    #[serde(default)]
    pub boundary_rendezvous: bool,
    pub agents: Vec<AgentSpec>,
    /// Goal for single-agent online replanning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ContinuousPoint>,
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MapOverrides {
    pub threshold: Option<u8>,
    pub cell_size: Option<f64>,
}

/// A scenario file with its map loaded, before the multi-agent checks.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub file: ScenarioFile,
    pub map: OccupancyGrid,
}

impl LoadedScenario {
    pub fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        Ok(Scenario::new(self.map, self.file.agents, self.file.boundary_rendezvous)?)
    }
}

pub fn read_text(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: &Path, overrides: MapOverrides) -> Result<LoadedScenario, ScenarioError> {
    let text = read_text(path)?;
    let mut file: ScenarioFile = from_json_str(&text).map_err(|source| ScenarioError::Schema {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(t) = overrides.threshold {
        file.threshold = t;
    }
    if let Some(h) = overrides.cell_size {
        file.cell_size = h;
    }
    if !(file.cell_size > 0.0 && file.cell_size.is_finite()) {
        return Err(ScenarioError::CellSize(file.cell_size));
    }
    let map_path = path.parent().unwrap_or(Path::new(".")).join(&file.map);
    let bytes = std::fs::read(&map_path).map_err(|source| ScenarioError::Io {
        path: map_path.clone(),
        source,
    })?;
    let map = OccupancyGrid::load_pgm(&bytes, file.threshold, file.cell_size).map_err(|source| ScenarioError::Map {
        path: map_path,
        source,
    })?;
    Ok(LoadedScenario { file, map })
}

pub fn load_scenario(path: &Path, overrides: MapOverrides) -> Result<Scenario, ScenarioError> {
    load(path, overrides)?.into_scenario()
}
