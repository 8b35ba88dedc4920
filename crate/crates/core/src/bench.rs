//! Wall-clock scaling of the planner in grid size and in team size.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::maps::{corner_agents, reference_map, rim_agents};
use crate::planner::{plan, PlanError, PlanOptions, Scenario};
use crate::velocity::VelocityLaw;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("grid sizes must be at least 64, got {0}")]
    SizeTooSmall(usize),
    #[error("agent counts must be at least 2, got {0}")]
    TooFewAgents(usize),
    #[error("repetitions must be at least 1")]
    NoRepetitions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    /// Cells in the grid.
    pub cells: usize,
    pub agents: usize,
    /// Median over repetitions; `None` when the row failed.
    pub seconds: Option<f64>,
    pub samples: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Log-log slope of time against cells, over rows sharing an agent count.
    pub slope_cells: Option<f64>,
    /// Log-log slope of time against agents, over rows sharing a grid size.
    pub slope_agents: Option<f64>,
}

pub fn median(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Least-squares slope of `ln y` on `ln x`; needs at least four points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 4 {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

const LAW: VelocityLaw = VelocityLaw::Exponential { alpha: 3.0, v_max: 1.0 };

/// Rough working set of one plan: per agent a distance, speed and arrival
/// field plus solver bookkeeping, and the cost field.
fn reserve_working_set(cells: usize, agents: usize) -> Result<(), String> {
    let bytes = cells.saturating_mul(agents.saturating_mul(48).saturating_add(16));
    let mut probe: Vec<u8> = Vec::new();
    probe
        .try_reserve_exact(bytes)
        .map_err(|_| format!("insufficient memory for {bytes} bytes"))
}

fn time_plan(scenario: &Scenario, repetitions: usize) -> Result<Vec<f64>, PlanError> {
    (0..repetitions)
        .map(|_| {
            let t0 = Instant::now();
            plan(scenario)?;
            Ok(t0.elapsed().as_secs_f64())
        })
        .collect()
}

fn row(size: usize, count: usize, repetitions: usize, corners: bool) -> BenchRow {
    let cells = size * size;
    let mut out = BenchRow {
        cells,
        agents: count,
        seconds: None,
        samples: Vec::new(),
        error: None,
    };
    if let Err(e) = reserve_working_set(cells, count) {
        out.error = Some(e);
        return out;
    }
    let map = reference_map(size);
    let agents = if corners {
        corner_agents(size, LAW)
    } else {
        rim_agents(&map, count, LAW)
    };
    let result = Scenario::new(map, agents, false).and_then(|s| {
        let s = s.with_options(PlanOptions {
            threads: Some(1),
            ..Default::default()
        });
        time_plan(&s, repetitions)
    });
    match result {
        Ok(samples) => {
            out.seconds = median(&samples);
            out.samples = samples;
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    log::info!("bench {size}x{size}, {count} agents: {:?}", out.seconds);
    out
}

/// Times single-threaded planning on the reference map: three corner agents
/// at each of `sizes`, then `agent_counts` rim agents at `agent_grid`.
pub fn run(
    sizes: &[usize],
    agent_counts: &[usize],
    agent_grid: usize,
    repetitions: usize,
) -> Result<BenchReport, BenchError> {
    if repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }
    if let Some(&s) = sizes.iter().chain([&agent_grid]).find(|&&s| s < 64) {
        return Err(BenchError::SizeTooSmall(s));
    }
    if let Some(&n) = agent_counts.iter().find(|&&n| n < 2) {
        return Err(BenchError::TooFewAgents(n));
    }
    let size_rows: Vec<BenchRow> = sizes.iter().map(|&s| row(s, 3, repetitions, true)).collect();
    let agent_rows: Vec<BenchRow> = agent_counts
        .iter()
        .map(|&n| row(agent_grid, n, repetitions, false))
        .collect();
    let fit = |rows: &[BenchRow], x: fn(&BenchRow) -> f64| {
        let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.seconds.map(|t| (x(r), t))).collect();
        loglog_slope(&pts)
    };
    let slope_cells = fit(&size_rows, |r| r.cells as f64);
    let slope_agents = fit(&agent_rows, |r| r.agents as f64);
    Ok(BenchReport {
        rows: size_rows.into_iter().chain(agent_rows).collect(),
        slope_cells,
        slope_agents,
    })
}
