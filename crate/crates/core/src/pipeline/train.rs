use std::io::Write;

use rand::RngCore;
use rayon::prelude::*;

use super::{PipelineError, RunConfig};
use crate::dda::{
    build_target_matrix, dda_loss_var, match_tracks_with, ClutterTarget, DdaError, DdaModel,
};
use crate::nn::{
    adamw_step, AdamWConfig, AdamWState, Gradients, Graph, Mode, ParamSet, PlateauScheduler,
};
use crate::partition::{partition, partition_by_labels, Track};
use crate::rng::stream;
use crate::sim::{simulate_scene, GroundTruthTrajectory, Scene, TaskConfig};
use crate::smoother::model::component_loss_var;
use crate::smoother::DsModel;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    /// Batch-mean loss.
    pub loss: f64,
    /// Learning rate used for the step.
    pub lr: f64,
}

pub struct TrainOutcome<M> {
    pub model: M,
    pub log: Vec<LossRecord>,
    /// Training scenes that contributed nothing (no measurements, or more
    /// objects than matchable tracks).
    pub skipped_scenes: usize,
}

pub fn write_loss_log(out: &mut impl Write, log: &[LossRecord]) -> std::io::Result<()> {
    writeln!(out, "step,loss,lr")?;
    for r in log {
        writeln!(out, "{},{},{}", r.step, r.loss, r.lr)?;
    }
    Ok(())
}

/// Moving average of the last `window` losses at each step (shorter at the
/// start).
pub fn moving_average(log: &[LossRecord], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(log.len());
    let mut sum = 0.0;
    for (i, r) in log.iter().enumerate() {
        sum += r.loss;
        if i >= window {
            sum -= log[i - window].loss;
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Loss and gradient of one scene, or `None` when the scene carries no
/// training signal. `params` must share the layout of `model.params`.
pub fn dda_scene_gradient(
    model: &DdaModel,
    params: &ParamSet,
    scene: &Scene,
    clutter: ClutterTarget,
    mode: &mut Mode,
) -> Result<Option<(f64, Gradients)>, PipelineError> {
    if scene.measurements.is_empty() {
        return Ok(None);
    }
    let z: Vec<_> = scene.measurements.iter().map(|m| m.z).collect();
    let labels = scene.labels();
    let mut g = Graph::new(params);
    let probs = model.forward(&mut g, &z, &scene.times(), mode)?;
    let a = crate::dda::AssociationMatrix::new(g.value(probs).clone())?;
    let m = match match_tracks_with(&a, &labels, clutter) {
        Ok(m) => m,
        Err(DdaError::Capacity { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let target = build_target_matrix(&m, &labels, clutter);
    let loss = dda_loss_var(&mut g, probs, &target)?;
    Ok(Some((g.value(loss).item(), g.backward(loss)?)))
}

/// Where the smoother's input tracks come from.
#[derive(Clone, Copy)]
pub enum DsAssociations<'a> {
    /// Partitions of a frozen associator's output.
    Predicted(&'a DdaModel),
    /// Partitions by true labels, confidence 1.
    GroundTruth,
}

/// Tracks of a scene paired with the object matched to each, or `None` when
/// the scene cannot be matched.
pub fn ds_components<'s>(
    scene: &'s Scene,
    assoc: DsAssociations,
    clutter: ClutterTarget,
) -> Result<Option<Vec<(Track, Option<&'s GroundTruthTrajectory>)>>, PipelineError> {
    let window = scene.config.window;
    match assoc {
        DsAssociations::GroundTruth => Ok(Some(
            partition_by_labels(&scene.measurements, window)
                .into_iter()
                .map(|(id, tr)| (tr, scene.truth(id)))
                .collect(),
        )),
        DsAssociations::Predicted(dda) => {
            if scene.measurements.is_empty() {
                return Ok(Some(Vec::new()));
            }
            let a = dda.associate_scene(scene)?;
            let m = match match_tracks_with(&a, &scene.labels(), clutter) {
                Ok(m) => m,
                Err(DdaError::Capacity { .. }) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let z: Vec<_> = scene.measurements.iter().map(|m| m.z).collect();
            let tracks = partition(&a, &z, &scene.times(), window);
            Ok(Some(
                tracks
                    .into_iter()
                    .map(|tr| {
                        let id = m.s_star[tr.source_column];
                        let truth = (id >= 0).then(|| scene.truth(id)).flatten();
                        (tr, truth)
                    })
                    .collect(),
            ))
        }
    }
}

/// Summed component loss of one scene and its gradient. `params` must share
/// the layout of `model.params`.
pub fn ds_scene_gradient(
    model: &DsModel,
    params: &ParamSet,
    components: &[(Track, Option<&GroundTruthTrajectory>)],
    mode: &mut Mode,
) -> Result<Option<(f64, Gradients)>, PipelineError> {
    if components.is_empty() {
        return Ok(None);
    }
    let mut g = Graph::new(params);
    let mut total = None;
    for (track, truth) in components {
        let out = model.forward(&mut g, track, mode)?;
        let l = component_loss_var(&mut g, &out, *truth)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let loss = total.expect("nonempty");
    Ok(Some((g.value(loss).item(), g.backward(loss)?)))
}

/// Shared optimizer loop: `batch_gradient(step)` returns the per-scene
/// results of one batch in a fixed order.
fn optimize(
    params: &mut ParamSet,
    cfg: &RunConfig,
    steps: usize,
    what: &str,
    mut batch_gradient: impl FnMut(
        &ParamSet,
        usize,
    ) -> Result<Vec<Option<(f64, Gradients)>>, PipelineError>,
) -> Result<(Vec<LossRecord>, usize), PipelineError> {
    let t = &cfg.train;
    let mut opt = AdamWConfig {
        lr: t.lr,
        weight_decay: t.weight_decay,
        ..AdamWConfig::default()
    };
    let mut state = AdamWState::new(params);
    let mut sched = PlateauScheduler::new(t.plateau_window, t.plateau_patience);
    let mut log = Vec::with_capacity(steps);
    let mut skipped = 0;
    for step in 0..steps {
        let results = batch_gradient(params, step)?;
        let mut grads = Gradients::zeros_like(params);
        let mut loss = 0.0;
        let mut used = 0usize;
        for r in results {
            match r {
                Some((l, g)) => {
                    loss += l;
                    grads.add(&g);
                    used += 1;
                }
                None => skipped += 1,
            }
        }
        if used == 0 {
            continue;
        }
        loss /= used as f64;
        grads.scale(1.0 / used as f64);
        if !loss.is_finite() || !grads.is_finite() {
            return Err(PipelineError::Diverged { step, loss });
        }
        let lr = opt.lr;
        adamw_step(params, &grads, &mut state, &opt);
        opt.lr *= sched.observe(loss);
        log.push(LossRecord { step, loss, lr });
        if (step + 1) % 1000 == 0 {
            log::info!("{what} step {}: loss {loss:.5} lr {lr:.3e}", step + 1);
        }
    }
    Ok((log, skipped))
}

fn training_scene(
    task: &TaskConfig,
    seed: u64,
    label: &str,
    index: u64,
) -> Result<Scene, PipelineError> {
    Ok(simulate_scene(task, &mut stream(seed, label, index))?)
}

/// Trains the associator on freshly simulated scenes: `dda_batch` scenes per
/// step, each matched against the current prediction.
pub fn train_dda(cfg: &RunConfig) -> Result<TrainOutcome<DdaModel>, PipelineError> {
    cfg.validate()?;
    let task = cfg.task()?;
    let mut model = DdaModel::new(cfg.model.dda(&task), &mut stream(cfg.seed, "dda-init", 0))?;
    let batch = cfg.train.dda_batch;
    let clutter = cfg.train.clutter_target;
    let seed = cfg.seed;
    let mut params = std::mem::take(&mut model.params);
    let result = optimize(
        &mut params,
        cfg,
        cfg.train.dda_steps,
        "dda",
        |params, step| {
            let model = &model;
            (0..batch)
                .into_par_iter()
                .map(|b| {
                    let index = (step * batch + b) as u64;
                    let scene = training_scene(&task, seed, "dda-train", index)?;
                    let mut dropout = stream(seed, "dda-dropout", index);
                    let rng: &mut dyn RngCore = &mut dropout;
                    dda_scene_gradient(model, params, &scene, clutter, &mut Mode::Train(rng))
                })
                .collect()
        },
    );
    model.params = params;
    let (log, skipped) = result?;
    Ok(TrainOutcome {
        model,
        log,
        skipped_scenes: skipped,
    })
}

/// Trains the smoother on tracks produced by `assoc` (the associator is not
/// updated).
pub fn train_ds(
    cfg: &RunConfig,
    assoc: DsAssociations,
) -> Result<TrainOutcome<DsModel>, PipelineError> {
    cfg.validate()?;
    let task = cfg.task()?;
    if let DsAssociations::Predicted(dda) = assoc {
        super::check_dda(dda, cfg)?;
    }
    let mut model = DsModel::new(cfg.model.ds(&task), &mut stream(cfg.seed, "ds-init", 0))?;
    let batch = cfg.train.ds_batch;
    let clutter = cfg.train.clutter_target;
    let seed = cfg.seed;
    let mut params = std::mem::take(&mut model.params);
    let result = optimize(
        &mut params,
        cfg,
        cfg.train.ds_steps,
        "ds",
        |params, step| {
            let model = &model;
            (0..batch)
                .into_par_iter()
                .map(|b| {
                    let index = (step * batch + b) as u64;
                    let scene = training_scene(&task, seed, "ds-train", index)?;
                    let Some(components) = ds_components(&scene, assoc, clutter)? else {
                        return Ok(None);
                    };
                    let mut dropout = stream(seed, "ds-dropout", index);
                    let rng: &mut dyn RngCore = &mut dropout;
                    ds_scene_gradient(model, params, &components, &mut Mode::Train(rng))
                })
                .collect()
        },
    );
    model.params = params;
    let (log, skipped) = result?;
    Ok(TrainOutcome {
        model,
        log,
        skipped_scenes: skipped,
    })
}
