use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dda, check_ds, PipelineError, RunConfig};
use crate::dda::{match_tracks_with, DdaError, DdaModel};
use crate::metrics::{taa_counts, tgospa, TgospaParams, TgospaResult, TrajectorySet};
use crate::partition::{partition, partition_by_labels};
use crate::rng::stream;
use crate::sim::{simulate_scene, Scene};
use crate::smoother::{extract_trajectories, DsModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    #[serde(rename = "predicted")]
    Predicted,
    #[serde(rename = "gt-assoc")]
    GroundTruthAssoc,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Predicted => "predicted",
            EvalMode::GroundTruthAssoc => "gt-assoc",
        })
    }
}

impl FromStr for EvalMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "predicted" => Ok(EvalMode::Predicted),
            "gt-assoc" => Ok(EvalMode::GroundTruthAssoc),
            _ => Err(PipelineError::Config(format!(
                "unknown evaluation mode {s:?}"
            ))),
        }
    }
}

/// Sample mean with a normal-approximation 95% interval `mean +- half_width`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                half_width: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let half_width = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            1.96 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            half_width,
            n,
        }
    }

    /// Ratio estimate `sum(num) / sum(den)` over clusters, with a
    /// delta-method interval.
    pub fn ratio(pairs: &[(f64, f64)]) -> Self {
        let n = pairs.len();
        let num: f64 = pairs.iter().map(|p| p.0).sum();
        let den: f64 = pairs.iter().map(|p| p.1).sum();
        if n == 0 || den == 0.0 {
            return Self {
                mean: f64::NAN,
                half_width: f64::NAN,
                n,
            };
        }
        let r = num / den;
        let half_width = if n > 1 {
            let mean_den = den / n as f64;
            let ss: f64 = pairs.iter().map(|(a, b)| (a - r * b) * (a - r * b)).sum();
            1.96 * (ss / ((n - 1) as f64 * n as f64)).sqrt() / mean_den
        } else {
            0.0
        };
        Self {
            mean: r,
            half_width,
            n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TgospaStats {
    pub total: Stat,
    pub loc: Stat,
    pub miss: Stat,
    #[serde(rename = "false")]
    pub false_: Stat,
    pub switch: Stat,
}

impl TgospaStats {
    fn of(scores: &[TgospaResult]) -> Self {
        let pick =
            |f: fn(&TgospaResult) -> f64| Stat::of(&scores.iter().map(f).collect::<Vec<_>>());
        Self {
            total: pick(|r| r.total),
            loc: pick(|r| r.loc),
            miss: pick(|r| r.miss),
            false_: pick(|r| r.false_),
            switch: pick(|r| r.switch),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub mode: EvalMode,
    pub seed: u64,
    pub scenes: usize,
    pub params: TgospaParams,
    pub tgospa: TgospaStats,
    /// Score of reporting no trajectories at all.
    pub empty_baseline: Stat,
    /// Mean of per-scene TAA over scenes with object measurements; absent in
    /// ground-truth-association mode.
    pub taa: Option<Stat>,
    /// Object measurements correctly associated over all scenes, divided by
    /// all object measurements.
    pub taa_pooled: Option<Stat>,
    /// Scenes whose objects outnumber the matchable tracks; no TAA for them.
    pub unmatched_scenes: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SceneScore {
    pub tgospa: TgospaResult,
    pub baseline: f64,
    pub taa: Option<f64>,
    /// `(hits, object measurements)`
    pub taa_counts: (usize, usize),
    pub matched: bool,
}

/// Scene `index` of the evaluation set for `seed`.
pub fn eval_scene(cfg: &RunConfig, index: usize) -> Result<Scene, PipelineError> {
    Ok(simulate_scene(
        &cfg.task()?,
        &mut stream(cfg.seed, "eval", index as u64),
    )?)
}

fn add(a: TgospaResult, b: TgospaResult) -> TgospaResult {
    TgospaResult {
        total: a.total + b.total,
        loc: a.loc + b.loc,
        miss: a.miss + b.miss,
        false_: a.false_ + b.false_,
        switch: a.switch + b.switch,
    }
}

pub fn score_scene(
    cfg: &RunConfig,
    scene: &Scene,
    dda: Option<&DdaModel>,
    ds: &DsModel,
    mode: EvalMode,
) -> Result<SceneScore, PipelineError> {
    let params = &cfg.eval.tgospa;
    let window = scene.config.window;
    let truths = TrajectorySet::truths(scene);
    let baseline = tgospa(&truths, &TrajectorySet::new(window, vec![]), params)?.total;
    match mode {
        EvalMode::Predicted => {
            let dda = dda.ok_or_else(|| {
                PipelineError::Config("predicted mode needs an associator".into())
            })?;
            if scene.measurements.is_empty() {
                let r = tgospa(&truths, &TrajectorySet::new(window, vec![]), params)?;
                return Ok(SceneScore {
                    tgospa: r,
                    baseline,
                    taa: None,
                    taa_counts: (0, 0),
                    matched: true,
                });
            }
            let a = dda.associate_scene(scene)?;
            let z: Vec<_> = scene.measurements.iter().map(|m| m.z).collect();
            let tracks = partition(&a, &z, &scene.times(), window);
            let estimates = ds.smooth_all(&tracks)?;
            let y = TrajectorySet::new(window, extract_trajectories(&estimates));
            let r = tgospa(&truths, &y, params)?;
            let labels = scene.labels();
            let (counts, matched) = match match_tracks_with(&a, &labels, cfg.train.clutter_target) {
                Ok(m) => (taa_counts(&a, &labels, &m)?, true),
                Err(DdaError::Capacity { .. }) => ((0, 0), false),
                Err(e) => return Err(e.into()),
            };
            Ok(SceneScore {
                tgospa: r,
                baseline,
                taa: (counts.1 > 0).then(|| counts.0 as f64 / counts.1 as f64),
                taa_counts: counts,
                matched,
            })
        }
        EvalMode::GroundTruthAssoc => {
            let tracks = partition_by_labels(&scene.measurements, window);
            let mut total = TgospaResult::default();
            for truth in &scene.truths {
                let x = TrajectorySet::new(window, vec![truth.into()]);
                let y = match tracks.iter().find(|(id, _)| *id == truth.object_id) {
                    Some((_, track)) => extract_trajectories(&[ds.smooth(track)?]),
                    None => vec![],
                };
                total = add(total, tgospa(&x, &TrajectorySet::new(window, y), params)?);
            }
            Ok(SceneScore {
                tgospa: total,
                baseline,
                taa: None,
                taa_counts: (0, 0),
                matched: true,
            })
        }
    }
}

/// Scores `n_scenes` seeded evaluation scenes.
pub fn evaluate(
    cfg: &RunConfig,
    dda: Option<&DdaModel>,
    ds: &DsModel,
    n_scenes: usize,
    mode: EvalMode,
) -> Result<EvalReport, PipelineError> {
    cfg.validate()?;
    let task = cfg.task()?;
    if let Some(dda) = dda {
        check_dda(dda, cfg)?;
    }
    check_ds(ds, cfg)?;
    let scores = (0..n_scenes)
        .into_par_iter()
        .map(|i| score_scene(cfg, &eval_scene(cfg, i)?, dda, ds, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let tg: Vec<_> = scores.iter().map(|s| s.tgospa).collect();
    let baseline: Vec<_> = scores.iter().map(|s| s.baseline).collect();
    let taas: Vec<_> = scores.iter().filter_map(|s| s.taa).collect();
    let counts: Vec<_> = scores
        .iter()
        .filter(|s| s.taa_counts.1 > 0)
        .map(|s| (s.taa_counts.0 as f64, s.taa_counts.1 as f64))
        .collect();
    Ok(EvalReport {
        task: task.name,
        mode,
        seed: cfg.seed,
        scenes: n_scenes,
        params: cfg.eval.tgospa,
        tgospa: TgospaStats::of(&tg),
        empty_baseline: Stat::of(&baseline),
        taa: (mode == EvalMode::Predicted).then(|| Stat::of(&taas)),
        taa_pooled: (mode == EvalMode::Predicted).then(|| Stat::ratio(&counts)),
        unmatched_scenes: scores.iter().filter(|s| !s.matched).count(),
    })
}

pub const REPORT_CSV_HEADER: &str = "task,mode,scenes,seed,p,c,gamma,total_mean,total_ci,loc_mean,loc_ci,miss_mean,miss_ci,false_mean,false_ci,switch_mean,switch_ci,baseline_mean,taa_mean,taa_ci,taa_pooled,taa_pooled_ci";

impl EvalReport {
    pub fn csv_row(&self) -> String {
        let t = &self.tgospa;
        let mut cells = vec![
            self.task.clone(),
            self.mode.to_string(),
            self.scenes.to_string(),
            self.seed.to_string(),
            self.params.p.to_string(),
            self.params.c.to_string(),
            self.params.gamma.to_string(),
        ];
        for s in [t.total, t.loc, t.miss, t.false_, t.switch] {
            cells.push(s.mean.to_string());
            cells.push(s.half_width.to_string());
        }
        cells.push(self.empty_baseline.mean.to_string());
        for stat in [self.taa, self.taa_pooled] {
            match stat {
                Some(s) => {
                    cells.push(s.mean.to_string());
                    cells.push(s.half_width.to_string());
                }
                None => cells.extend([String::new(), String::new()]),
            }
        }
        cells.join(",")
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{REPORT_CSV_HEADER}")?;
        writeln!(out, "{}", self.csv_row())
    }
}
