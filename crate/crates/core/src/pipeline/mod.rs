//! Dataset generation, two-stage training and evaluation, plus the file
//! layout used by the command-line front end.

pub mod config;
pub mod eval;
pub mod train;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{EvalConfig, ModelConfig, RunConfig, TaskSpec, TrainConfig};
pub use eval::{evaluate, score_scene, EvalMode, EvalReport, SceneScore, Stat, TgospaStats};
pub use train::{
    dda_scene_gradient, ds_components, ds_scene_gradient, moving_average, train_dda, train_ds,
    write_loss_log, DsAssociations, LossRecord, TrainOutcome,
};

use crate::dda::{DdaError, DdaModel};
use crate::metrics::MetricError;
use crate::nn::NnError;
use crate::rng::stream;
use crate::sim::io::{write_header, write_scene};
use crate::sim::{simulate_scene, SimError, TaskConfig};
use crate::smoother::{DsModel, SmootherError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error("checkpoint does not match the run config: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dda(#[from] DdaError),
    #[error(transparent)]
    Smoother(#[from] SmootherError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const DDA_DIR: &str = "dda";
pub const DS_DIR: &str = "ds";
pub const DDA_LOG: &str = "dda_loss.csv";
pub const DS_LOG: &str = "ds_loss.csv";

pub fn check_dda(dda: &DdaModel, cfg: &RunConfig) -> Result<(), PipelineError> {
    let want = cfg.model.dda(&cfg.task()?);
    if dda.config != want {
        return Err(PipelineError::Incompatible(format!(
            "associator built for {:?}, run expects {:?}",
            dda.config, want
        )));
    }
    Ok(())
}

pub fn check_ds(ds: &DsModel, cfg: &RunConfig) -> Result<(), PipelineError> {
    let want = cfg.model.ds(&cfg.task()?);
    if ds.config != want {
        return Err(PipelineError::Incompatible(format!(
            "smoother built for {:?}, run expects {:?}",
            ds.config, want
        )));
    }
    Ok(())
}

/// Writes `count` scenes drawn from `task` with `seed`, preceded by a
/// header comment.
pub fn generate_dataset(
    task: &TaskConfig,
    seed: u64,
    count: usize,
    out: &mut impl Write,
) -> Result<(), PipelineError> {
    task.validate()?;
    write_header(out, &task.name, count, seed)?;
    const CHUNK: usize = 256;
    for start in (0..count).step_by(CHUNK) {
        let scenes = (start..count.min(start + CHUNK))
            .into_par_iter()
            .map(|i| simulate_scene(task, &mut stream(seed, "scene", i as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        for s in &scenes {
            write_scene(out, s)?;
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn run_simulate(
    cfg: &RunConfig,
    out_dir: &Path,
    count: usize,
) -> Result<PathBuf, PipelineError> {
    let path = out_dir.join(SCENES_FILE);
    let mut w = create(&path)?;
    generate_dataset(&cfg.task()?, cfg.seed, count, &mut w)?;
    w.flush()?;
    Ok(path)
}

pub fn run_train_dda(
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<TrainOutcome<DdaModel>, PipelineError> {
    let outcome = train_dda(cfg)?;
    outcome.model.save(&out_dir.join(DDA_DIR))?;
    let mut w = create(&out_dir.join(DDA_LOG))?;
    write_loss_log(&mut w, &outcome.log)?;
    w.flush()?;
    Ok(outcome)
}

pub fn load_dda(cfg: &RunConfig, out_dir: &Path) -> Result<DdaModel, PipelineError> {
    let dir = out_dir.join(DDA_DIR);
    if !dir.exists() {
        return Err(PipelineError::MissingCheckpoint(dir));
    }
    let model = DdaModel::load(&dir)?;
    check_dda(&model, cfg)?;
    Ok(model)
}

pub fn load_ds(cfg: &RunConfig, out_dir: &Path) -> Result<DsModel, PipelineError> {
    let dir = out_dir.join(DS_DIR);
    if !dir.exists() {
        return Err(PipelineError::MissingCheckpoint(dir));
    }
    let model = DsModel::load(&dir)?;
    check_ds(&model, cfg)?;
    Ok(model)
}

pub fn run_train_ds(
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<TrainOutcome<DsModel>, PipelineError> {
    let dda = load_dda(cfg, out_dir)?;
    let outcome = train_ds(cfg, DsAssociations::Predicted(&dda))?;
    outcome.model.save(&out_dir.join(DS_DIR))?;
    let mut w = create(&out_dir.join(DS_LOG))?;
    write_loss_log(&mut w, &outcome.log)?;
    w.flush()?;
    Ok(outcome)
}

/// Writes `report-<mode>.json` and `report-<mode>.csv` under `out_dir`.
pub fn run_evaluate(
    cfg: &RunConfig,
    out_dir: &Path,
    mode: EvalMode,
    n_scenes: usize,
) -> Result<EvalReport, PipelineError> {
    let ds = load_ds(cfg, out_dir)?;
    let dda = match mode {
        EvalMode::Predicted => Some(load_dda(cfg, out_dir)?),
        EvalMode::GroundTruthAssoc => None,
    };
    let report = evaluate(cfg, dda.as_ref(), &ds, n_scenes, mode)?;
    let mut w = create(&out_dir.join(format!("report-{mode}.json")))?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    let mut w = create(&out_dir.join(format!("report-{mode}.csv")))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(report)
}
