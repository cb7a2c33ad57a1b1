//! Simulates a desk scene and scores a few perturbed versions of its truth
//! with TGOSPA.
//!
//! ```text
//! cargo run -p tracker-core --example tgospa_demo -- 7
//! ```

use tracker_core::metrics::{tgospa, TrajectorySet};
use tracker_core::rng::stream;
use tracker_core::sim::simulate_scene;
use tracker_core::{TaskConfig, TgospaParams};

fn main() {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let task = TaskConfig::desk();
    let scene = simulate_scene(&task, &mut stream(seed, "demo", 0)).expect("valid preset");
    println!(
        "scene {seed}: {} objects, {} measurements ({} clutter)",
        scene.truths.len(),
        scene.measurements.len(),
        scene.measurements.iter().filter(|m| m.label < 0).count()
    );

    let truth = TrajectorySet::truths(&scene);
    let params = TgospaParams::default();
    let mut shifted = truth.clone();
    for tr in &mut shifted.trajectories {
        for s in &mut tr.states {
            s[0] += 0.5;
        }
    }
    let mut dropped = truth.clone();
    dropped.trajectories.pop();
    let empty = TrajectorySet::new(task.window, vec![]);

    for (name, est) in [
        ("exact", &truth),
        ("shifted 0.5 m", &shifted),
        ("one dropped", &dropped),
        ("empty", &empty),
    ] {
        let r = tgospa(&truth, est, &params).expect("same window");
        println!(
            "{name:>14}: total {:7.2}  loc {:6.2}  miss {:6.2}  false {:6.2}  switch {:5.2}",
            r.total, r.loc, r.miss, r.false_, r.switch
        );
    }
}
