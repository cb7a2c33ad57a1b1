//! Line-oriented scene files: an optional `#` comment header, then one JSON
//! object per scene.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{GroundTruthTrajectory, Measurement, Scene, SimError, SingleState, TaskConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub id: i64,
    pub t_s: usize,
    pub states: Vec<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementRecord {
    pub z: [f64; 3],
    pub t: usize,
    pub b: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub config_id: String,
    pub truths: Vec<TruthRecord>,
    pub measurements: Vec<MeasurementRecord>,
}

impl From<&Scene> for SceneRecord {
    fn from(scene: &Scene) -> Self {
        Self {
            config_id: scene.config.name.clone(),
            truths: scene
                .truths
                .iter()
                .map(|t| TruthRecord {
                    id: t.object_id,
                    t_s: t.t_start,
                    states: t.states.iter().map(|s| s.0).collect(),
                })
                .collect(),
            measurements: scene
                .measurements
                .iter()
                .map(|m| MeasurementRecord {
                    z: m.z,
                    t: m.t,
                    b: m.label,
                })
                .collect(),
        }
    }
}

impl SceneRecord {
    pub fn into_scene(self, config: &TaskConfig) -> Scene {
        Scene {
            config: config.clone(),
            truths: self
                .truths
                .into_iter()
                .map(|t| GroundTruthTrajectory {
                    object_id: t.id,
                    t_start: t.t_s,
                    states: t.states.into_iter().map(SingleState).collect(),
                })
                .collect(),
            measurements: self
                .measurements
                .into_iter()
                .map(|m| Measurement {
                    z: m.z,
                    t: m.t,
                    label: m.b,
                })
                .collect(),
        }
    }
}

pub fn write_header(
    out: &mut impl Write,
    config_id: &str,
    count: usize,
    seed: u64,
) -> std::io::Result<()> {
    writeln!(
        out,
        "# scenes config_id={config_id} count={count} seed={seed}"
    )
}

pub fn write_scene(out: &mut impl Write, scene: &Scene) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, &SceneRecord::from(scene))?;
    writeln!(out)
}

/// Reads every scene in the stream; each record's `config_id` must match
/// `config.name`.
pub fn read_scenes(input: impl BufRead, config: &TaskConfig) -> Result<Vec<Scene>, SimError> {
    let mut scenes = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record: SceneRecord = serde_json::from_str(trimmed).map_err(|e| SimError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.config_id != config.name {
            return Err(SimError::Parse {
                line: i + 1,
                message: format!(
                    "scene from config {:?}, expected {:?}",
                    record.config_id, config.name
                ),
            });
        }
        let scene = record.into_scene(config);
        scene.check_invariants()?;
        scenes.push(scene);
    }
    Ok(scenes)
}
