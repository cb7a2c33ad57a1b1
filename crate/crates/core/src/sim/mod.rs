//! Multi-object scene simulator: nearly-constant-velocity motion, radar
//! range/Doppler/bearing measurements with state-dependent noise, Poisson
//! births and clutter.

pub mod config;
pub mod io;
pub mod models;
pub mod scene;

use serde::{Deserialize, Serialize};

pub use config::{BirthSchedule, Fov, Interval, TaskConfig, PRESET_NAMES};
pub use models::{motion_step, noise_covariance, radar_project, sample_births, sample_clutter};
pub use scene::simulate_scene;

/// Label carried by clutter measurements.
pub const CLUTTER_LABEL: i64 = -1;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid task config: {0}")]
    InvalidConfig(String),
    #[error("unknown task preset {0:?}")]
    UnknownPreset(String),
    #[error("state at the sensor origin has no bearing")]
    DegeneratePosition,
    #[error("scene invariant violated: {0}")]
    Invariant(String),
    #[error("scene file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `(p_x, p_y, v_x, v_y)` in metres and metres per second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SingleState(pub [f64; 4]);

impl SingleState {
    pub fn position(&self) -> [f64; 2] {
        [self.0[0], self.0[1]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthTrajectory {
    pub object_id: i64,
    /// First step (1-based) the object exists.
    pub t_start: usize,
    pub states: Vec<SingleState>,
}

impl GroundTruthTrajectory {
    /// Last step (inclusive) the object exists.
    pub fn t_end(&self) -> usize {
        self.t_start + self.states.len() - 1
    }

    pub fn state_at(&self, t: usize) -> Option<&SingleState> {
        t.checked_sub(self.t_start).and_then(|k| self.states.get(k))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    /// `(range, Doppler, bearing)`
    pub z: [f64; 3],
    /// Time of arrival, 1-based step.
    pub t: usize,
    /// Originating object, or [`CLUTTER_LABEL`].
    pub label: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub config: TaskConfig,
    pub truths: Vec<GroundTruthTrajectory>,
    pub measurements: Vec<Measurement>,
}

impl Scene {
    pub fn labels(&self) -> Vec<i64> {
        self.measurements.iter().map(|m| m.label).collect()
    }

    pub fn times(&self) -> Vec<usize> {
        self.measurements.iter().map(|m| m.t).collect()
    }

    pub fn truth(&self, object_id: i64) -> Option<&GroundTruthTrajectory> {
        self.truths.iter().find(|t| t.object_id == object_id)
    }

    pub fn check_invariants(&self) -> Result<(), SimError> {
        let window = self.config.window;
        let fail = |m: String| Err(SimError::Invariant(m));
        for tr in &self.truths {
            if tr.states.is_empty() || tr.t_start < 1 || tr.t_end() > window {
                return fail(format!(
                    "trajectory {} spans outside 1..={window}",
                    tr.object_id
                ));
            }
            if tr.object_id < 0 {
                return fail(format!("negative object id {}", tr.object_id));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.measurements {
            if m.t < 1 || m.t > window {
                return fail(format!("measurement time {} outside window", m.t));
            }
            if m.label == CLUTTER_LABEL {
                continue;
            }
            let Some(tr) = self.truth(m.label) else {
                return fail(format!("label {} has no trajectory", m.label));
            };
            if tr.state_at(m.t).is_none() {
                return fail(format!(
                    "object {} measured at {} while absent",
                    m.label, m.t
                ));
            }
            if !seen.insert((m.label, m.t)) {
                return fail(format!("object {} measured twice at {}", m.label, m.t));
            }
        }
        Ok(())
    }
}
