//! Writes the sample maps and scenarios used in the README into a directory.
//!
//! cargo run --release -p rendezvous-fmm --example make_data -- data

use std::fs;
use std::path::{Path, PathBuf};

use rendezvous_fmm::maps::{corner_agents, moving_target, reference_map, shoreline_agents, shoreline_map};
use rendezvous_fmm::scenario::{ScenarioFile, DEFAULT_THRESHOLD};
use rendezvous_fmm::velocity::VelocityLaw;

const SIZE: usize = 256;

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) {
    let path = dir.join(name);
    fs::write(&path, bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    println!("wrote {}", path.display());
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    fs::create_dir_all(&dir).expect("create output directory");

    write(&dir, "reference.pgm", reference_map(SIZE).to_pgm());
    let corners = ScenarioFile {
        map: "reference.pgm".into(),
        threshold: DEFAULT_THRESHOLD,
        cell_size: 1.0,
        boundary_rendezvous: false,
        agents: corner_agents(SIZE, VelocityLaw::Exponential { alpha: 3.0, v_max: 1.0 }),
        target: None,
    };
    write(&dir, "corners.json", json(&corners));

    write(&dir, "shoreline.pgm", shoreline_map(SIZE).to_pgm());
    let shoreline = ScenarioFile {
        map: "shoreline.pgm".into(),
        boundary_rendezvous: true,
        agents: shoreline_agents(SIZE),
        ..corners.clone()
    };
    write(&dir, "shoreline.json", json(&shoreline));

    let (task, events) = moving_target(SIZE);
    write(&dir, "moving.pgm", task.map.to_pgm());
    let moving = ScenarioFile {
        map: "moving.pgm".into(),
        cell_size: task.map.cell_size(),
        agents: vec![task.agent],
        target: Some(task.target),
        ..corners
    };
    write(&dir, "moving.json", json(&moving));
    write(&dir, "moving_events.json", json(&events));
}
