use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::dda::{ClutterTarget, DdaConfig};
use crate::metrics::TgospaParams;
use crate::nn::EncoderConfig;
use crate::sim::TaskConfig;
use crate::smoother::DsConfig;

/// A preset name or an inline task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskSpec {
    Preset(String),
    Inline(TaskConfig),
}

impl TaskSpec {
    pub fn resolve(&self) -> Result<TaskConfig, PipelineError> {
        let cfg = match self {
            TaskSpec::Preset(name) => TaskConfig::preset(name)?,
            TaskSpec::Inline(cfg) => cfg.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
    /// `B`
    pub max_tracks: usize,
    pub dda_head: Vec<usize>,
    pub position_head: Vec<usize>,
    pub velocity_head: Vec<usize>,
    pub existence_head: Vec<usize>,
    pub trajectory_head: Vec<usize>,
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            d_model: 128,
            blocks: 6,
            heads: 8,
            ffn_hidden: 2048,
            dropout: 0.1,
            max_tracks: 20,
            dda_head: vec![128, 128],
            position_head: vec![128, 128],
            velocity_head: vec![128, 128],
            existence_head: vec![64],
            trajectory_head: vec![64],
        }
    }

    pub fn desk() -> Self {
        Self {
            d_model: 32,
            blocks: 2,
            heads: 2,
            ffn_hidden: 64,
            dropout: 0.1,
            max_tracks: 8,
            dda_head: vec![32, 32],
            position_head: vec![32, 32],
            velocity_head: vec![32, 32],
            existence_head: vec![32],
            trajectory_head: vec![32],
        }
    }

    fn encoder(&self, window: usize) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            heads: self.heads,
            blocks: self.blocks,
            ffn_hidden: self.ffn_hidden,
            dropout: self.dropout,
            max_positions: window,
        }
    }

    pub fn dda(&self, task: &TaskConfig) -> DdaConfig {
        DdaConfig {
            encoder: self.encoder(task.window),
            max_tracks: self.max_tracks,
            head_hidden: self.dda_head.clone(),
            input_box: task.fov,
        }
    }

    pub fn ds(&self, task: &TaskConfig) -> DsConfig {
        DsConfig {
            encoder: self.encoder(task.window),
            position_hidden: self.position_head.clone(),
            velocity_hidden: self.velocity_head.clone(),
            existence_hidden: self.existence_head.clone(),
            trajectory_hidden: self.trajectory_head.clone(),
            ..DsConfig::desk(task.window)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dda_steps: usize,
    pub ds_steps: usize,
    pub dda_batch: usize,
    pub ds_batch: usize,
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Moving-average window of the plateau rule, in steps.
    pub plateau_window: usize,
    /// Steps without improvement before the learning rate is halved.
    pub plateau_patience: usize,
    #[serde(default)]
    pub clutter_target: ClutterTarget,
}

fn default_weight_decay() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub scenes: usize,
    #[serde(default)]
    pub tgospa: TgospaParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl RunConfig {
    /// Full-size networks and schedule on benchmark task `number`.
    pub fn full(number: usize) -> Self {
        Self {
            task: TaskSpec::Preset(format!("task{number}")),
            model: ModelConfig::full(),
            train: TrainConfig {
                dda_steps: 2_000_000,
                ds_steps: 2_000_000,
                dda_batch: 32,
                ds_batch: 16,
                lr: 5e-5,
                weight_decay: default_weight_decay(),
                plateau_window: 2_000,
                plateau_patience: 100_000,
                clutter_target: ClutterTarget::SingleColumn,
            },
            eval: EvalConfig {
                scenes: 1000,
                tgospa: TgospaParams::default(),
            },
            seed: 0,
        }
    }

    /// Small networks on the `desk` task; trains on one CPU core.
    pub fn desk() -> Self {
        Self {
            task: TaskSpec::Preset("desk".into()),
            model: ModelConfig::desk(),
            train: TrainConfig {
                dda_steps: 20_000,
                ds_steps: 10_000,
                dda_batch: 8,
                ds_batch: 8,
                lr: 1e-3,
                weight_decay: default_weight_decay(),
                plateau_window: 200,
                plateau_patience: 2_000,
                clutter_target: ClutterTarget::SingleColumn,
            },
            eval: EvalConfig {
                scenes: 500,
                tgospa: TgospaParams::default(),
            },
            seed: 2024,
        }
    }

    pub fn preset(name: &str) -> Result<Self, PipelineError> {
        match name {
            "desk" => Ok(Self::desk()),
            _ => name
                .strip_prefix("full-task")
                .and_then(|n| n.parse().ok())
                .filter(|n| (1..=10).contains(n))
                .map(Self::full)
                .ok_or_else(|| PipelineError::Config(format!("unknown run preset {name:?}"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn task(&self) -> Result<TaskConfig, PipelineError> {
        self.task.resolve()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let task = self.task()?;
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        let t = &self.train;
        if t.dda_batch == 0 || t.ds_batch == 0 || t.plateau_window == 0 {
            return bad("batch sizes and plateau window must be positive");
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) || t.weight_decay < 0.0 {
            return bad("learning rate must be positive and weight decay nonnegative");
        }
        if self.eval.scenes == 0 {
            return bad("evaluation needs at least one scene");
        }
        let min_tracks = if t.clutter_target == ClutterTarget::SingleColumn {
            2
        } else {
            1
        };
        if self.model.max_tracks < min_tracks {
            return bad("too few tracks for the clutter target mode");
        }
        self.model.dda(&task).encoder.validate()?;
        self.eval.tgospa.validate()?;
        Ok(())
    }
}
