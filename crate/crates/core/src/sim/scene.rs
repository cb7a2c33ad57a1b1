use rand::Rng;
use rand_distr::StandardNormal;

use super::models::{motion_step, noise_covariance, radar_project, sample_births, sample_clutter};
use super::{GroundTruthTrajectory, Measurement, Scene, SimError, SingleState, TaskConfig};

fn in_fov(x: &SingleState, cfg: &TaskConfig) -> bool {
    radar_project(x).is_ok_and(|z| cfg.fov.contains(z))
}

/// Simulates one window of the multi-object model.
///
/// Per step: surviving objects move (survival draw with `p_s`, then death if
/// the new state projects outside the FOV), births whose state projects
/// outside the FOV are discarded, each object is detected with probability
/// `p_d`, and clutter is appended. Detected measurements are not clipped to
/// the FOV.
pub fn simulate_scene(cfg: &TaskConfig, rng: &mut impl Rng) -> Result<Scene, SimError> {
    cfg.validate()?;
    let mut finished: Vec<GroundTruthTrajectory> = Vec::new();
    let mut alive: Vec<GroundTruthTrajectory> = Vec::new();
    let mut measurements = Vec::new();
    let mut next_id = 0i64;

    for t in 1..=cfg.window {
        if t > 1 {
            let mut still = Vec::with_capacity(alive.len());
            for mut traj in alive.drain(..) {
                let survives = rng.random::<f64>() < cfg.p_s;
                let next =
                    survives.then(|| motion_step(traj.states.last().expect("nonempty"), cfg, rng));
                match next {
                    Some(x) if in_fov(&x, cfg) => {
                        traj.states.push(x);
                        still.push(traj);
                    }
                    _ => finished.push(traj),
                }
            }
            alive = still;
        }

        for x in sample_births(cfg, t, rng)? {
            if in_fov(&x, cfg) {
                alive.push(GroundTruthTrajectory {
                    object_id: next_id,
                    t_start: t,
                    states: vec![x],
                });
                next_id += 1;
            }
        }

        for traj in &alive {
            if rng.random::<f64>() < cfg.p_d {
                let clean = radar_project(traj.states.last().expect("nonempty"))?;
                let var = noise_covariance(clean, cfg);
                let z = std::array::from_fn(|i| {
                    let w: f64 = rng.sample(StandardNormal);
                    clean[i] + var[i].sqrt() * w
                });
                measurements.push(Measurement {
                    z,
                    t,
                    label: traj.object_id,
                });
            }
        }
        measurements.extend(sample_clutter(cfg, t, rng));
    }
    finished.extend(alive);
    finished.sort_by_key(|tr| tr.object_id);

    Ok(Scene {
        config: cfg.clone(),
        truths: finished,
        measurements,
    })
}
