//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so every line is printed; the process fails if any criterion does.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rendezvous_fmm::baseline::{compare, weighted_centroid, RrtParams};
use rendezvous_fmm::bench;
use rendezvous_fmm::maps::{corner_agents, moving_target, reference_map, shoreline_agents, shoreline_map, MOVING_TARGET_DT};
use rendezvous_fmm::oracle::{sandwich_campaign, SandwichConfig, EXACT_RULE, LOWER_D16, UPPER_D8};
use rendezvous_fmm::paths::{extract_path, DescentParams, TimedPath};
use rendezvous_fmm::planner::{arrival_map, plan_detailed, PlanError, PlanOptions, Scenario};
use rendezvous_fmm::replan::run_online;
use rendezvous_fmm::velocity::{AgentSpec, DomainSelector, VelocityLaw};
use rendezvous_fmm::{fmm_solve, local_update, Cell, ContinuousPoint, GridIndex, OccupancyGrid, ScalarField, SourceSet};

struct Verdict {
    pass: bool,
    detail: String,
}

/// Collects sub-checks of one criterion.
#[derive(Default)]
struct Checks(Vec<(bool, String)>);

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        self.0.push((ok, what.into()));
    }

    fn verdict(self) -> Verdict {
        let pass = self.0.iter().all(|(ok, _)| *ok);
        let detail = self
            .0
            .into_iter()
            .map(|(ok, what)| format!("{what} [{}]", if ok { "ok" } else { "FAIL" }))
            .collect::<Vec<_>>()
            .join("; ");
        Verdict { pass, detail }
    }
}

fn single_threaded(s: Scenario) -> Scenario {
    s.with_options(PlanOptions {
        threads: Some(1),
        ..Default::default()
    })
}

/// Max over free cells of |T - r/v| for a point source at the grid center.
fn cone_max_error(cells: usize, h: f64, speed: f64) -> (f64, f64) {
    let grid = OccupancyGrid::all_free(cells, cells, h).unwrap();
    let v = ScalarField::like(&grid, speed);
    let src = GridIndex::new(cells / 2, cells / 2);
    let t0 = Instant::now();
    let t = fmm_solve(&grid, &v, &SourceSet::single(src)).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let mut worst: f64 = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            let r = ((i as f64 - src.i as f64).powi(2) + (j as f64 - src.j as f64).powi(2)).sqrt() * h;
            worst = worst.max((t.get(GridIndex::new(i, j)) - r / speed).abs());
        }
    }
    (worst, elapsed)
}

fn eikonal_correctness() -> Verdict {
    let mut c = Checks::default();
    let (coarse, secs) = cone_max_error(129, 1.0, 1.0);
    c.check(coarse <= 0.6, format!("129x129 max error {coarse:.4}h <= 0.6h"));
    let (fine, _) = cone_max_error(257, 0.5, 1.0);
    let ratio = coarse / fine;
    c.check((1.5..=2.5).contains(&ratio), format!("halving h divides the error by {ratio:.3}"));
    c.check(secs < 1.0, format!("129x129 solve {secs:.3} s < 1 s"));
    c.verdict()
}

fn local_update_exactness() -> Verdict {
    let mut c = Checks::default();
    let two_sided = local_update(1.0, 1.0, 1.0, 1.0).unwrap();
    let expected = (2.0 + 2f64.sqrt()) / 2.0;
    c.check((two_sided - expected).abs() <= 1e-12, format!("two-sided {two_sided}"));
    let one_sided = local_update(0.0, 5.0, 1.0, 1.0).unwrap();
    c.check(one_sided == 1.0, format!("one-sided {one_sided}"));
    c.verdict()
}

fn oracle_sandwich() -> Verdict {
    let mut c = Checks::default();
    let t0 = Instant::now();
    let report = sandwich_campaign(&SandwichConfig::default(), EXACT_RULE).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    for name in [UPPER_D8, LOWER_D16] {
        let p = report.get(name).unwrap();
        let mut what = format!("{name}: {}/{} cells violate", p.violations, p.checked);
        if let Some(f) = &p.first_failure {
            what.push_str(&format!(", first at seed {} cell {} ({})", f.seed, f.cell, f.detail));
        }
        c.check(p.passed(), what);
    }
    c.check(secs < 30.0, format!("100 trials in {secs:.2} s < 30 s"));
    c.verdict()
}

fn velocity_law() -> Verdict {
    let mut c = Checks::default();
    let d_max = 17.5;
    let laws: Vec<VelocityLaw> = [3.0, 10.0, 20.0]
        .map(|alpha| VelocityLaw::Exponential { alpha, v_max: 2.0 })
        .to_vec();
    for (law, alpha) in laws.iter().zip([3.0f64, 10.0, 20.0]) {
        let at_zero = law.speed_at(0.0, d_max);
        let at_max = law.speed_at(d_max, d_max);
        let expected = 2.0 * (1.0 - (-alpha).exp());
        c.check(
            at_zero == 0.0 && (at_max - expected).abs() <= 1e-12,
            format!("alpha {alpha}: V(0) = {at_zero}, V(d_max) = {at_max:.15}"),
        );
    }
    let ordered = (0..=1000).all(|k| {
        let d = d_max * k as f64 / 1000.0;
        let v: Vec<f64> = laws.iter().map(|l| l.speed_at(d, d_max)).collect();
        v[0] <= v[1] && v[1] <= v[2]
    });
    c.check(ordered, "speed is pointwise monotone in alpha");
    c.verdict()
}

/// Exhaustive scan of max-over-agents arrival time; returns the best value
/// and how many cells every agent reaches.
fn brute_force_cost(fields: &[&ScalarField]) -> (ScalarField, f64, usize) {
    let (w, h) = fields[0].dims();
    let mut cost = ScalarField::filled(w, h, fields[0].cell_size(), f64::INFINITY);
    let mut best = f64::INFINITY;
    let mut support = 0;
    for i in 0..h {
        for j in 0..w {
            let c = GridIndex::new(i, j);
            let worst = fields.iter().map(|f| f.get(c)).fold(0.0, f64::max);
            if worst.is_finite() {
                support += 1;
                cost.set(c, worst);
                best = best.min(worst);
            }
        }
    }
    (cost, best, support)
}

fn corners_scenario(size: usize) -> Scenario {
    let law = VelocityLaw::Exponential { alpha: 3.0, v_max: 1.0 };
    single_threaded(Scenario::new(reference_map(size), corner_agents(size, law), false).unwrap())
}

fn rendezvous_optimality(paths: &mut Vec<(String, TimedPath, ContinuousPoint, ContinuousPoint)>) -> Verdict {
    let mut c = Checks::default();
    let scenario = corners_scenario(256);
    let (solution, artifacts) = plan_detailed(&scenario).unwrap();
    let fields: Vec<&ScalarField> = artifacts.agents.iter().map(|a| &a.arrival).collect();
    let (cost, best, support) = brute_force_cost(&fields);
    c.check(
        solution.meeting_time <= best,
        format!(
            "F(x_m) = {:.4} vs scan minimum {best:.4} over {support} cells",
            solution.meeting_time
        ),
    );
    let grid = scenario.base_map();
    let starts: Vec<ContinuousPoint> = scenario.agents().iter().map(|a| grid.center(a.start)).collect();
    let centroid = ContinuousPoint::new(
        starts.iter().map(|p| p.x).sum::<f64>() / 3.0,
        starts.iter().map(|p| p.y).sum::<f64>() / 3.0,
    );
    let lib_centroid = weighted_centroid(scenario.agents(), grid);
    c.check(
        centroid.distance(&lib_centroid) < 1e-9,
        "equal speeds put the weighted centroid at the plain mean",
    );
    let at_centroid = cost.get(grid.cell_at(centroid).unwrap());
    c.check(
        solution.meeting_time <= at_centroid,
        format!("F(x_m) <= F(centroid) = {at_centroid:.4}"),
    );
    for (spec, route) in scenario.agents().iter().zip(&solution.agents) {
        paths.push((spec.id.clone(), route.path.clone(), grid.center(spec.start), solution.meeting_point));
    }
    c.verdict()
}

fn symmetry(paths: &mut Vec<(String, TimedPath, ContinuousPoint, ContinuousPoint)>) -> Verdict {
    let mut c = Checks::default();
    let n = 65;
    let grid = OccupancyGrid::all_free(n, n, 1.0).unwrap();
    let law = VelocityLaw::Exponential { alpha: 3.0, v_max: 1.5 };
    let agent = |id: &str, j| AgentSpec {
        id: id.into(),
        start: GridIndex::new(20, j),
        law,
        domain: DomainSelector::Normal,
    };
    let scenario = single_threaded(Scenario::new(grid.clone(), vec![agent("west", 6), agent("east", 58)], false).unwrap());
    let (solution, artifacts) = plan_detailed(&scenario).unwrap();
    let midpoint = ContinuousPoint::new(32.0, 20.0);
    let off = solution.meeting_point.distance(&midpoint);
    c.check(off <= 1.0, format!("meeting point {off:.3} cells from the midpoint"));
    let (t1, t2) = (
        artifacts.agents[0].arrival.get(solution.meeting_cell),
        artifacts.agents[1].arrival.get(solution.meeting_cell),
    );
    let bound = 2.0 * grid.cell_size() / law.v_max();
    c.check((t1 - t2).abs() <= bound, format!("|T1 - T2| = {:.2e} <= {bound:.3}", (t1 - t2).abs()));
    for (spec, route) in scenario.agents().iter().zip(&solution.agents) {
        paths.push((spec.id.clone(), route.path.clone(), grid.center(spec.start), solution.meeting_point));
    }
    c.verdict()
}

fn scaling(report: &bench::BenchReport, agents: bool) -> Verdict {
    let mut c = Checks::default();
    let rows: Vec<String> = report
        .rows
        .iter()
        .filter(|r| (r.agents != 3) == agents)
        .map(|r| match (r.seconds, &r.error) {
            (Some(s), _) if agents => format!("N={} {s:.3}s", r.agents),
            (Some(s), _) => format!("{}^2 {s:.3}s", (r.cells as f64).sqrt() as usize),
            (None, e) => format!("{} cells: {}", r.cells, e.as_deref().unwrap_or("no time")),
        })
        .collect();
    let (slope, lo, hi, what) = if agents {
        (report.slope_agents, 0.85, 1.15, "time vs N")
    } else {
        (report.slope_cells, 0.9, 1.3, "time vs n")
    };
    match slope {
        Some(s) => c.check((lo..=hi).contains(&s), format!("{what} slope {s:.3} in [{lo}, {hi}] ({})", rows.join(", "))),
        None => c.check(false, format!("{what}: fewer than 4 timed rows ({})", rows.join(", "))),
    }
    if !agents {
        let t512 = report.rows.iter().find(|r| r.cells == 512 * 512 && r.agents == 3).and_then(|r| r.seconds);
        c.check(
            t512.is_some_and(|t| t <= 10.0),
            format!("3-agent 512^2 plan {:.3} s <= 10 s single-threaded", t512.unwrap_or(f64::NAN)),
        );
    }
    c.verdict()
}

fn boundary_extension(paths: &mut Vec<(String, TimedPath, ContinuousPoint, ContinuousPoint)>) -> Verdict {
    let mut c = Checks::default();
    let map = shoreline_map(128);
    let agents: Vec<AgentSpec> = shoreline_agents(128)
        .into_iter()
        .filter(|a| a.id == "usv" || a.id == "ugv")
        .collect();
    let domains: Vec<OccupancyGrid> = agents.iter().map(|a| a.domain.apply(&map)).collect();
    assert_ne!(domains[0], domains[1]);

    let on = single_threaded(Scenario::new(map.clone(), agents.clone(), true).unwrap());
    let (solution, artifacts) = plan_detailed(&on).unwrap();
    let boundary: Vec<_> = domains.iter().map(|d| d.boundary_cells()).collect();
    let candidates: Vec<GridIndex> = artifacts.cost.support().collect();
    let all_boundary = candidates.iter().all(|c| boundary.iter().any(|b| b.contains(c)));
    let all_finite = candidates
        .iter()
        .all(|&cell| artifacts.agents.iter().all(|a| a.effective().get(cell).is_finite()));
    c.check(
        !candidates.is_empty() && all_boundary && all_finite,
        format!("{} candidates, all boundary cells with finite times", candidates.len()),
    );

    let mut mismatches = 0;
    let mut checked = 0;
    for (k, fields) in artifacts.agents.iter().enumerate() {
        let ext = fields.extended.as_ref().unwrap();
        for &b in &boundary[k] {
            let expected = [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
                .iter()
                .filter_map(|&(di, dj)| {
                    let n = GridIndex::new(b.i.checked_add_signed(di)?, b.j.checked_add_signed(dj)?);
                    domains[k].is_free(n).then(|| fields.arrival.get(n))
                })
                .fold(f64::INFINITY, f64::min);
            checked += 1;
            if ext.get(b) != expected {
                mismatches += 1;
            }
        }
    }
    c.check(mismatches == 0, format!("{checked} boundary values equal the min over free neighbors, {mismatches} differ"));
    c.check(
        boundary.iter().any(|b| b.contains(&solution.meeting_cell)),
        format!("rendezvous found at {}", solution.meeting_cell),
    );
    for (spec, route) in agents.iter().zip(&solution.agents) {
        paths.push((spec.id.clone(), route.path.clone(), map.center(spec.start), solution.meeting_point));
    }

    let off = single_threaded(Scenario::new(map, agents, false).unwrap());
    let err = plan_detailed(&off).err();
    c.check(
        matches!(err, Some(PlanError::NoRendezvous)),
        format!(
            "without extension: {}",
            err.map_or("a rendezvous".to_string(), |e| e.to_string())
        ),
    );
    c.verdict()
}

fn online_replanning() -> Verdict {
    let mut c = Checks::default();
    let (task, events) = moving_target(256);
    let trace = run_online(&task, &events, MOVING_TARGET_DT).unwrap();
    c.check(trace.segments.len() == events.len() + 1, format!("{} intervals", trace.segments.len()));

    let mut active = task.map.clone();
    let h = active.cell_size();
    let mut blocked_points = 0;
    for (k, seg) in trace.segments.iter().enumerate() {
        if k > 0 {
            let e = &events[k - 1];
            let edits: Vec<(GridIndex, Cell)> = e
                .set_occupied
                .iter()
                .map(|&x| (x, Cell::Occupied))
                .chain(e.set_free.iter().map(|&x| (x, Cell::Free)))
                .collect();
            active = active.with_cells(&edits).unwrap();
        }
        blocked_points += seg
            .traveled
            .points()
            .iter()
            .filter(|p| !active.cell_at(p.point).is_some_and(|cell| active.is_free(cell)))
            .count();
    }
    c.check(blocked_points == 0, format!("{blocked_points} traveled points inside their interval's obstacles"));
    let worst_gap = trace
        .segments
        .windows(2)
        .map(|w| {
            let a = w[0].traveled.last().unwrap().point;
            let b = w[1].traveled.first().unwrap().point;
            a.distance(&b)
        })
        .fold(0.0, f64::max);
    c.check(worst_gap <= h, format!("largest segment gap {:.3} cells", worst_gap / h));

    let quiet = run_online(&task, &[], MOVING_TARGET_DT).unwrap();
    let t = arrival_map(&task.agent, &task.map).unwrap();
    let one_shot = extract_path(&t, task.agent.start, task.target, &DescentParams::default()).unwrap();
    c.check(quiet.stitched == one_shot, "empty schedule equals one-shot planning");
    c.verdict()
}

fn baseline_harness() -> Verdict {
    let mut c = Checks::default();
    let scenario = corners_scenario(256);
    let params = RrtParams::for_map(scenario.base_map(), 42, 20_000);
    let first = compare(&scenario, &params).unwrap();
    let second = compare(&scenario, &params).unwrap();
    c.check(first == second, "same seed, identical report and paths");
    c.check(first.baseline_feasible, "baseline reaches the centroid");
    c.check(
        first.baseline_meeting_time.is_some() && first.fmm_meeting_time.is_finite(),
        format!(
            "meeting times recorded: fmm {:.2} s, baseline {:.2} s",
            first.fmm_meeting_time,
            first.baseline_meeting_time.unwrap_or(f64::NAN)
        ),
    );
    c.check(
        first.fmm_time_at_centroid.is_some_and(|t| first.fmm_meeting_time <= t),
        format!(
            "F(x_m) <= F(centroid) = {:.2}",
            first.fmm_time_at_centroid.unwrap_or(f64::NAN)
        ),
    );
    c.verdict()
}

fn path_sanity(collected: &[(String, TimedPath, ContinuousPoint, ContinuousPoint)]) -> Verdict {
    let mut c = Checks::default();
    let mut bad = Vec::new();
    for (id, path, start, goal) in collected {
        let times_ok = path.points().windows(2).all(|w| w[1].time >= w[0].time);
        let ends_ok = path.first().unwrap().point.distance(start) <= 1.0 && path.last().unwrap().point.distance(goal) <= 1.0;
        if !(times_ok && ends_ok) {
            bad.push(id.clone());
        }
    }
    c.check(bad.is_empty(), format!("{} rendezvous paths monotone with endpoints in place {bad:?}", collected.len()));

    let grid = OccupancyGrid::all_free(101, 101, 1.0).unwrap();
    let law = VelocityLaw::Uniform { v_max: 1.0 };
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for (from, to) in [
        ((50, 5), (50, 95)),
        ((5, 5), (95, 95)),
        ((90, 10), (20, 45)),
        ((3, 60), (97, 30)),
        ((50, 50), (10, 80)),
    ] {
        let agent = AgentSpec {
            id: "probe".into(),
            start: GridIndex::new(from.0, from.1),
            law,
            domain: DomainSelector::Normal,
        };
        let t = arrival_map(&agent, &grid).unwrap();
        let goal = grid.center(GridIndex::new(to.0, to.1));
        let path = extract_path(&t, agent.start, goal, &DescentParams::default()).unwrap();
        monotone &= path.is_time_monotone(0.0);
        let straight = grid.center(agent.start).distance(&goal);
        worst = worst.max((path.length() - straight).abs() / straight);
    }
    c.check(monotone, "empty-map paths have non-decreasing times");
    c.check(worst <= 0.05, format!("empty-map length within {:.2}% of straight line", 100.0 * worst));
    c.verdict()
}

fn run(id: &str, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let t0 = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Verdict {
        pass: false,
        detail: format!(
            "panicked: {}",
            e.downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        ),
    });
    println!(
        "{} {id:>2} {name} ({:.1} s): {}",
        if verdict.pass { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64(),
        verdict.detail
    );
    verdict.pass
}

fn main() {
    let mut paths = Vec::new();
    let mut results = vec![
        run("1", "eikonal correctness", eikonal_correctness),
        run("2", "local update exactness", local_update_exactness),
        run("3", "oracle sandwich", oracle_sandwich),
        run("4", "velocity law", velocity_law),
        run("5", "rendezvous optimality", || rendezvous_optimality(&mut paths)),
        run("6", "symmetry", || symmetry(&mut paths)),
    ];
    let report = bench::run(&[256, 512, 1024, 2048], &[2, 4, 8, 16], 512, 3).unwrap();
    results.push(run("7", "grid scaling", || scaling(&report, false)));
    results.push(run("8", "agent scaling", || scaling(&report, true)));
    results.push(run("9", "boundary extension", || boundary_extension(&mut paths)));
    results.push(run("10", "online replanning", online_replanning));
    results.push(run("11", "baseline harness", baseline_harness));
    results.push(run("12", "path sanity", || path_sanity(&paths)));
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
