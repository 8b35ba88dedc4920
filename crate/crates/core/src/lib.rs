//! Multi-agent rendezvous planning for heterogeneous vehicles on occupancy
//! grids, built on the fast marching method.
//!
//! The pipeline per agent is: obstacle distance field, speed map, arrival
//! time field. The rendezvous cell minimizes the latest arrival over all
//! agents, and each agent's path is recovered by descending its own arrival
//! field from the rendezvous cell.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod bench;
pub mod eikonal;
pub mod grid;
pub mod maps;
pub mod oracle;
pub mod paths;
pub mod planner;
pub mod replan;
pub mod scenario;
pub mod velocity;

pub use eikonal::{fmm_solve, local_update, ScalarField, SourceSet, UNREACHED};
pub use grid::{Cell, Connectivity, ContinuousPoint, GridIndex, OccupancyGrid};
