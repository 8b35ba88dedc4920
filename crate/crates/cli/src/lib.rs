//! Command implementations behind the `rendezvous` binary.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rendezvous_fmm::baseline::{compare, ComparisonError, ComparisonReport, RrtParams};
use rendezvous_fmm::bench::{self, BenchError, BenchReport};
use rendezvous_fmm::oracle::{
    convergence_campaign, corrupted_rule, sandwich_campaign, CampaignMaps, CampaignReport, OracleError,
    SandwichConfig, EXACT_RULE,
};
use rendezvous_fmm::planner::{plan_detailed, PlanError, PlanOptions, RendezvousSolution, Scenario};
use rendezvous_fmm::replan::{run_online, OnlineTask, ReplanError, ReplanEvent, ReplanTrace};
use rendezvous_fmm::scenario::{self, from_json_str, MapOverrides, ScenarioError, SchemaError};
use rendezvous_fmm::velocity::{agent_speed_map, distance_map, VelocityError};
use rendezvous_fmm::{ContinuousPoint, OccupancyGrid, ScalarField};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "rendezvous", version, about = "Multi-agent rendezvous planning with fast marching")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Default, Args)]
pub struct GlobalArgs {
    /// Worker thread cap (1 runs single-core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Meters per cell, overriding the scenario file.
    #[arg(long, global = true)]
    pub cell_size: Option<f64>,
    /// Gray level at or below which a map pixel is an obstacle.
    #[arg(long, global = true)]
    pub threshold: Option<u8>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the meeting point and every agent's path.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory for distance, speed, arrival and cost fields.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Directory for one `<agent>.csv` path file per agent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a single field in the text grid format.
    Field {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        kind: FieldKind,
        /// Agent id; required for every kind except `cost`.
        #[arg(long)]
        agent: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive one agent through a schedule of map and target changes.
    Replan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Replanning interval, seconds.
        #[arg(long)]
        dt: f64,
        /// Agent id; defaults to the first agent.
        #[arg(long)]
        agent: Option<String>,
        /// Goal as `x,y` in meters; defaults to the scenario's `target`.
        #[arg(long, value_parser = parse_point)]
        target: Option<ContinuousPoint>,
        /// Extra blocked radius around newly occupied cells, in cells.
        #[arg(long, default_value_t = 0)]
        dilation: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare against RRT* paths to the weighted centroid.
    Baseline {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 20_000)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time planning against grid size and team size.
    Bench {
        /// Grid side lengths, three corner agents each.
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
        sizes: Vec<usize>,
        /// Team sizes, on an `--agent-grid` sided map.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        agents: Vec<usize>,
        #[arg(long, default_value_t = 512)]
        agent_grid: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the solver against graph and analytic oracles.
    Verify {
        /// PGM map reused for every trial; an empty 33x33 map when absent.
        #[arg(long, conflicts_with = "random")]
        map: Option<PathBuf>,
        /// Draw a fresh 32x32 map with 15% obstacles per trial.
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_update: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldKind {
    Distance,
    Speed,
    Arrival,
    Cost,
}

fn parse_point(s: &str) -> Result<ContinuousPoint, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok(ContinuousPoint::new(parse(x)?, parse(y)?))
}

/// Exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Infeasible,
    Io,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Infeasible => 3,
            ErrorKind::Io => 4,
            ErrorKind::Internal => 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Replan(#[from] ReplanError),
    #[error(transparent)]
    Comparison(#[from] ComparisonError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{}: {source}", path.display())]
    Events {
        path: PathBuf,
        #[source]
        source: SchemaError,
    },
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{message}")]
    Usage { message: String, pointer: Option<String> },
    #[error("field computation failed: {0}")]
    Field(#[from] VelocityError),
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        CliError::Scenario(e.into())
    }
}

fn plan_kind(e: &PlanError) -> ErrorKind {
    match e {
        _ if e.is_config() => ErrorKind::Config,
        PlanError::NoRendezvous | PlanError::Path { .. } => ErrorKind::Infeasible,
        _ => ErrorKind::Internal,
    }
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Scenario(ScenarioError::Io { .. }) | CliError::Write { .. } => ErrorKind::Io,
            CliError::Scenario(ScenarioError::Plan(e)) | CliError::Comparison(ComparisonError::Plan(e)) => plan_kind(e),
            CliError::Scenario(_) | CliError::Events { .. } | CliError::Usage { .. } | CliError::Bench(_) => {
                ErrorKind::Config
            }
            CliError::Replan(e) => match e {
                ReplanError::TargetUnreachable { .. } | ReplanError::Trapped { .. } | ReplanError::Path { .. } => {
                    ErrorKind::Infeasible
                }
                ReplanError::Velocity { source, .. } if !matches!(source, VelocityError::Eikonal(_)) => {
                    ErrorKind::Config
                }
                ReplanError::Velocity { .. } | ReplanError::EmptyPath | ReplanError::NegativeDuration(_) => {
                    ErrorKind::Internal
                }
                _ => ErrorKind::Config,
            },
            CliError::Comparison(ComparisonError::Baseline(_)) => ErrorKind::Config,
            CliError::Oracle(OracleError::NoObstacles | OracleError::BadSource(_)) => ErrorKind::Config,
            CliError::Oracle(_) | CliError::Field(_) => ErrorKind::Internal,
        }
    }

    pub fn pointer(&self) -> Option<String> {
        match self {
            CliError::Scenario(e) => e.pointer(),
            CliError::Comparison(ComparisonError::Plan(e)) => e.pointer(),
            CliError::Events { source, .. } => Some(source.pointer.clone()),
            CliError::Usage { pointer, .. } => pointer.clone(),
            _ => None,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            CliError::Scenario(ScenarioError::Io { path, .. } | ScenarioError::Schema { path, .. } | ScenarioError::Map { path, .. })
            | CliError::Events { path, .. }
            | CliError::Write { path, .. } => Some(path),
            _ => None,
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.to_string(),
            kind: self.kind(),
            pointer: self.pointer(),
            path: self.path().map(|p| p.display().to_string()),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: String,
    pub kind: ErrorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pointer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// What a successful command wants the process to do.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub exit_code: i32,
    /// Printed on stdout.
    pub stdout: String,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { exit_code: 0, stdout }
    }
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let g = cli.global;
    match cli.command {
        Command::Plan {
            scenario,
            out,
            dump,
            csv,
        } => cmd_plan(&g, &scenario, &out, dump.as_deref(), csv.as_deref()),
        Command::Field {
            scenario,
            kind,
            agent,
            out,
        } => cmd_field(&g, &scenario, kind, agent.as_deref(), &out),
        Command::Replan {
            scenario,
            events,
            dt,
            agent,
            target,
            dilation,
            out,
        } => cmd_replan(&g, &scenario, &events, dt, agent.as_deref(), target, dilation, &out),
        Command::Baseline {
            scenario,
            seed,
            iterations,
            out,
        } => cmd_baseline(&g, &scenario, seed, iterations, &out),
        Command::Bench {
            sizes,
            agents,
            agent_grid,
            reps,
            out,
        } => cmd_bench(&sizes, &agents, agent_grid, reps, out.as_deref()),
        Command::Verify {
            map,
            random,
            trials,
            seed,
            corrupt_update,
        } => cmd_verify(&g, map.as_deref(), random, trials, seed, corrupt_update),
    }
}

fn overrides(g: &GlobalArgs) -> MapOverrides {
    MapOverrides {
        threshold: g.threshold,
        cell_size: g.cell_size,
    }
}

fn load(g: &GlobalArgs, path: &Path) -> Result<Scenario, CliError> {
    let s = scenario::load_scenario(path, overrides(g))?;
    Ok(s.with_options(PlanOptions {
        threads: g.threads,
        ..Default::default()
    }))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let wrap = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(wrap)?;
    f.write_all(contents.as_bytes()).map_err(wrap)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Agent ids become file names; anything outside `[A-Za-z0-9_-]` turns into `_`.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Serializes a solution the same way `plan` writes it.
pub fn solution_json(solution: &RendezvousSolution) -> String {
    to_json(solution)
}

fn clearance(profile_distance: Option<&ScalarField>, domain: &OccupancyGrid) -> Result<ScalarField, CliError> {
    match profile_distance {
        Some(d) => Ok(d.clone()),
        None => Ok(distance_map(domain)?),
    }
}

pub fn cmd_plan(
    g: &GlobalArgs,
    scenario_path: &Path,
    out: &Path,
    dump: Option<&Path>,
    csv: Option<&Path>,
) -> Result<Outcome, CliError> {
    let scenario = load(g, scenario_path)?;
    let (solution, artifacts) = plan_detailed(&scenario)?;
    write_file(out, &solution_json(&solution))?;
    if let Some(dir) = dump {
        create_dir(dir)?;
        for (spec, fields) in scenario.agents().iter().zip(&artifacts.agents) {
            let stem = file_stem(&spec.id);
            let d = clearance(fields.profile.distance.as_ref(), &fields.profile.domain)?;
            write_file(&dir.join(format!("distance_{stem}.txt")), &d.to_text())?;
            write_file(&dir.join(format!("speed_{stem}.txt")), &fields.profile.speed.to_text())?;
            write_file(&dir.join(format!("arrival_{stem}.txt")), &fields.effective().to_text())?;
        }
        write_file(&dir.join("cost.txt"), &artifacts.cost.values().to_text())?;
    }
    if let Some(dir) = csv {
        create_dir(dir)?;
        for route in &solution.agents {
            write_file(&dir.join(format!("{}.csv", file_stem(&route.id))), &route.path.to_csv())?;
        }
    }
    log::info!(
        "meeting at ({:.3}, {:.3}) after {:.3} s",
        solution.meeting_point.x,
        solution.meeting_point.y,
        solution.meeting_time
    );
    Ok(Outcome::ok(String::new()))
}

fn agent_index(scenario: &Scenario, id: Option<&str>) -> Result<usize, CliError> {
    match id {
        None => Ok(0),
        Some(id) => scenario
            .agents()
            .iter()
            .position(|a| a.id == id)
            .ok_or_else(|| CliError::Usage {
                message: format!("no agent with id {id:?}"),
                pointer: Some("/agents".into()),
            }),
    }
}

pub fn cmd_field(
    g: &GlobalArgs,
    scenario_path: &Path,
    kind: FieldKind,
    agent: Option<&str>,
    out: &Path,
) -> Result<Outcome, CliError> {
    let scenario = load(g, scenario_path)?;
    let field = if kind == FieldKind::Cost {
        plan_detailed(&scenario)?.1.cost.values().clone()
    } else {
        let id = agent.ok_or_else(|| CliError::Usage {
            message: format!("--agent is required for the {kind:?} field"),
            pointer: None,
        })?;
        let k = agent_index(&scenario, Some(id))?;
        let spec = &scenario.agents()[k];
        let wrap = |source| PlanError::Agent {
            index: k,
            id: spec.id.clone(),
            source,
        };
        let profile = agent_speed_map(scenario.base_map(), spec).map_err(wrap)?;
        match kind {
            FieldKind::Distance => clearance(profile.distance.as_ref(), &profile.domain)?,
            FieldKind::Speed => profile.speed,
            _ => {
                let (_, artifacts) = plan_detailed(&scenario)?;
                artifacts.agents[k].effective().clone()
            }
        }
    };
    write_file(out, &field.to_text())?;
    Ok(Outcome::ok(String::new()))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_replan(
    g: &GlobalArgs,
    scenario_path: &Path,
    events_path: &Path,
    dt: f64,
    agent: Option<&str>,
    target: Option<ContinuousPoint>,
    dilation: usize,
    out: &Path,
) -> Result<Outcome, CliError> {
    let loaded = scenario::load(scenario_path, overrides(g))?;
    let text = scenario::read_text(events_path)?;
    let events: Vec<ReplanEvent> = from_json_str(&text).map_err(|source| CliError::Events {
        path: events_path.to_path_buf(),
        source,
    })?;
    let agents = &loaded.file.agents;
    if agents.is_empty() {
        return Err(CliError::Usage {
            message: "the scenario has no agents".into(),
            pointer: Some("/agents".into()),
        });
    }
    let k = match agent {
        None => 0,
        Some(id) => agents.iter().position(|a| a.id == id).ok_or_else(|| CliError::Usage {
            message: format!("no agent with id {id:?}"),
            pointer: Some("/agents".into()),
        })?,
    };
    let target = target.or(loaded.file.target).ok_or_else(|| CliError::Usage {
        message: "no target: pass --target or set it in the scenario".into(),
        pointer: Some("/target".into()),
    })?;
    let task = OnlineTask {
        map: loaded.map,
        agent: agents[k].clone(),
        target,
        descent: Default::default(),
        dilation,
    };
    let trace: ReplanTrace = run_online(&task, &events, dt)?;
    for w in &trace.warnings {
        log::warn!("{w}");
    }
    write_file(out, &to_json(&trace))?;
    Ok(Outcome::ok(String::new()))
}

pub fn cmd_baseline(
    g: &GlobalArgs,
    scenario_path: &Path,
    seed: u64,
    iterations: usize,
    out: &Path,
) -> Result<Outcome, CliError> {
    let scenario = load(g, scenario_path)?;
    let params = RrtParams::for_map(scenario.base_map(), seed, iterations);
    let report: ComparisonReport = compare(&scenario, &params)?;
    write_file(out, &to_json(&report))?;
    Ok(Outcome::ok(String::new()))
}

pub fn cmd_bench(
    sizes: &[usize],
    agents: &[usize],
    agent_grid: usize,
    reps: usize,
    out: Option<&Path>,
) -> Result<Outcome, CliError> {
    let report: BenchReport = bench::run(sizes, agents, agent_grid, reps)?;
    let json = to_json(&report);
    match out {
        Some(p) => {
            write_file(p, &json)?;
            Ok(Outcome::ok(String::new()))
        }
        None => Ok(Outcome::ok(json)),
    }
}

/// Grid sides of the convergence study.
pub const CONVERGENCE_SIZES: [usize; 3] = [33, 65, 129];

pub fn cmd_verify(
    g: &GlobalArgs,
    map: Option<&Path>,
    random: bool,
    trials: usize,
    seed: u64,
    corrupt_update: bool,
) -> Result<Outcome, CliError> {
    if trials == 0 {
        return Err(CliError::Usage {
            message: "--trials must be at least 1".into(),
            pointer: None,
        });
    }
    let maps = if random {
        CampaignMaps::Random {
            size: 32,
            obstacle_fraction: 0.15,
        }
    } else if let Some(path) = map {
        let bytes = fs::read(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let grid = OccupancyGrid::load_pgm(
            &bytes,
            g.threshold.unwrap_or(scenario::DEFAULT_THRESHOLD),
            g.cell_size.unwrap_or(1.0),
        )
        .map_err(|source| ScenarioError::Map {
            path: path.to_path_buf(),
            source,
        })?;
        CampaignMaps::Fixed(grid)
    } else {
        CampaignMaps::Fixed(OccupancyGrid::all_free(33, 33, g.cell_size.unwrap_or(1.0)).expect("valid size"))
    };
    let rule = if corrupt_update { corrupted_rule } else { EXACT_RULE };
    let cfg = SandwichConfig {
        maps,
        trials,
        seed,
        ..Default::default()
    };
    let report: CampaignReport =
        sandwich_campaign(&cfg, rule)?.merge(convergence_campaign(&CONVERGENCE_SIZES, rule)?);
    let mut text = String::new();
    for p in &report.properties {
        let status = if p.passed() { "PASS" } else { "FAIL" };
        text.push_str(&format!("{status} {} ({} checks, {} violations)", p.name, p.checked, p.violations));
        if let Some(c) = &p.first_failure {
            text.push_str(&format!(
                "; first failure seed {} cell {}: {}, worst excess {:.3e}",
                c.seed, c.cell, c.detail, p.worst_excess
            ));
        }
        text.push('\n');
    }
    Ok(Outcome {
        exit_code: if report.passed() { 0 } else { 1 },
        stdout: text,
    })
}
