//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! The learning criteria train the desk-scale networks from scratch (about
//! ten minutes on one core).

mod common;

use std::path::Path;
use std::time::Instant;

use common::{
    check_assignment_optimality, check_dda_gradients, check_ds_gradients, check_loss_invariances,
    check_metric_axioms, check_simulator_stats, check_tgospa_oracle, ensure, Check,
};
use rayon::prelude::*;
use tracker_core::dda::{match_tracks_with, DdaError, DdaModel};
use tracker_core::metrics::taa_counts;
use tracker_core::pipeline::eval::eval_scene;
use tracker_core::pipeline::{
    evaluate, generate_dataset, moving_average, run_evaluate, run_simulate, run_train_dda,
    run_train_ds, train_dda, train_ds, DsAssociations, EvalMode, RunConfig, Stat, TaskSpec,
};
use tracker_core::TaskConfig;

const SEED: u64 = 2024;
const EVAL_SCENES: usize = 500;
const TREND_STEPS: usize = 10_000;
const TREND_CLUTTER: [f64; 3] = [5e-3, 1e-2, 2e-2];

/// Per-scene mean and pooled TAA of `dda` on the evaluation scenes of `cfg`.
fn association_accuracy(
    cfg: &RunConfig,
    dda: &DdaModel,
    scenes: usize,
) -> Result<(Stat, Stat), String> {
    let counts = (0..scenes)
        .into_par_iter()
        .map(|i| -> Result<Option<(usize, usize)>, String> {
            let scene = eval_scene(cfg, i).map_err(|e| e.to_string())?;
            if scene.measurements.is_empty() {
                return Ok(None);
            }
            let a = dda.associate_scene(&scene).map_err(|e| e.to_string())?;
            let labels = scene.labels();
            match match_tracks_with(&a, &labels, cfg.train.clutter_target) {
                Ok(m) => Ok(Some(
                    taa_counts(&a, &labels, &m).map_err(|e| e.to_string())?,
                )),
                Err(DdaError::Capacity { .. }) => Ok(None),
                Err(e) => Err(e.to_string()),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let counts: Vec<(f64, f64)> = counts
        .into_iter()
        .flatten()
        .filter(|c| c.1 > 0)
        .map(|(h, t)| (h as f64, t as f64))
        .collect();
    let per_scene: Vec<f64> = counts.iter().map(|(h, t)| h / t).collect();
    Ok((Stat::of(&per_scene), Stat::ratio(&counts)))
}

fn desk_learning() -> Check {
    let cfg = RunConfig::desk();
    ensure(cfg.seed == SEED, || {
        format!("desk preset seed {}", cfg.seed)
    })?;
    let b = cfg.model.max_tracks as f64;
    let dda = train_dda(&cfg).map_err(|e| e.to_string())?;
    let first = dda.log.first().map_or(f64::NAN, |r| r.loss);
    let final_loss = *moving_average(&dda.log, cfg.train.plateau_window)
        .last()
        .ok_or("no DDA training steps")?;
    let (per_scene, pooled) = association_accuracy(&cfg, &dda.model, EVAL_SCENES)?;

    let ds = train_ds(&cfg, DsAssociations::Predicted(&dda.model)).map_err(|e| e.to_string())?;
    let report = evaluate(
        &cfg,
        Some(&dda.model),
        &ds.model,
        EVAL_SCENES,
        EvalMode::Predicted,
    )
    .map_err(|e| e.to_string())?;
    let tg = report.tgospa.total.mean;
    let base = report.empty_baseline.mean;
    let reduction = 1.0 - tg / base;

    let detail = format!(
        "L_DDA step 0 {first:.3}, final {final_loss:.3} (bound {:.3}); TAA pooled {:.3} +- {:.3}, per-scene {:.3} +- {:.3}; TGOSPA {tg:.2} vs empty {base:.2} ({:.0}% lower)",
        0.5 * b.ln(),
        pooled.mean,
        pooled.half_width,
        per_scene.mean,
        per_scene.half_width,
        100.0 * reduction
    );
    ensure(final_loss <= 0.5 * b.ln(), || {
        format!("loss too high: {detail}")
    })?;
    ensure(pooled.mean >= 0.85, || format!("TAA too low: {detail}"))?;
    ensure(reduction >= 0.25, || {
        format!("TGOSPA reduction too small: {detail}")
    })?;
    Ok(detail)
}

fn trend_config(lambda_c: f64) -> RunConfig {
    let mut cfg = RunConfig::desk();
    let mut task = TaskConfig::desk();
    task.lambda_c = lambda_c;
    task.name = format!("desk-lc{lambda_c}");
    cfg.task = TaskSpec::Inline(task);
    cfg.train.dda_steps = TREND_STEPS;
    cfg
}

fn clutter_trend() -> Check {
    let mut rows = Vec::new();
    for lambda_c in TREND_CLUTTER {
        let cfg = trend_config(lambda_c);
        let dda = train_dda(&cfg).map_err(|e| e.to_string())?;
        let (per_scene, pooled) = association_accuracy(&cfg, &dda.model, EVAL_SCENES)?;
        rows.push((lambda_c, per_scene, pooled));
    }
    let detail = rows
        .iter()
        .map(|(l, s, p)| {
            format!(
                "lambda_c {l}: pooled {:.3}, per-scene {:.3}",
                p.mean, s.mean
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    for w in rows.windows(2) {
        ensure(
            w[1].2.mean < w[0].2.mean && w[1].1.mean < w[0].1.mean,
            || format!("not strictly decreasing: {detail}"),
        )?;
    }
    Ok(detail)
}

fn run_tiny(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut cfg = RunConfig::desk();
    cfg.train.dda_steps = 150;
    cfg.train.ds_steps = 100;
    let e = |e: tracker_core::pipeline::PipelineError| e.to_string();
    run_simulate(&cfg, dir, 300).map_err(e)?;
    run_train_dda(&cfg, dir).map_err(e)?;
    run_train_ds(&cfg, dir).map_err(e)?;
    run_evaluate(&cfg, dir, EvalMode::Predicted, 100).map_err(e)?;
    run_evaluate(&cfg, dir, EvalMode::GroundTruthAssoc, 100).map_err(e)?;
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&path).map_err(|e| e.to_string())?));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Check {
    let task = TaskConfig::desk();
    let mut a = Vec::new();
    let mut b = Vec::new();
    generate_dataset(&task, SEED, 2_000, &mut a).map_err(|e| e.to_string())?;
    generate_dataset(&task, SEED, 2_000, &mut b).map_err(|e| e.to_string())?;
    ensure(a == b, || "dataset bytes differ between runs".into())?;

    let first = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    let x = run_tiny(first.path())?;
    let y = run_tiny(second.path())?;
    let names: Vec<_> = x.iter().map(|f| f.0.as_str()).collect();
    ensure(
        names == y.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(),
        || "different file sets".into(),
    )?;
    for ((name, u), (_, v)) in x.iter().zip(&y) {
        ensure(u == v, || format!("{name} differs between runs"))?;
    }
    ensure(
        names.iter().any(|n| n.ends_with("report-predicted.json")),
        || "no report written".into(),
    )?;
    Ok(format!(
        "2000-scene dataset ({} bytes) and {} run files identical: {}",
        a.len(),
        names.len(),
        names.join(", ")
    ))
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        (
            "tgospa-oracle-equivalence",
            Box::new(|| check_tgospa_oracle(200, SEED)),
        ),
        ("metric-axioms", Box::new(|| check_metric_axioms(100, SEED))),
        (
            "gradient-checks",
            Box::new(|| {
                Ok(format!(
                    "{}; {}",
                    check_dda_gradients(5, SEED)?,
                    check_ds_gradients(5, SEED)?
                ))
            }),
        ),
        (
            "loss-invariances",
            Box::new(|| check_loss_invariances(100, SEED)),
        ),
        (
            "assignment-optimality",
            Box::new(|| check_assignment_optimality(500, SEED)),
        ),
        (
            "simulator-statistics",
            Box::new(|| check_simulator_stats(10_000, SEED)),
        ),
        ("desk-learning", Box::new(desk_learning)),
        ("clutter-trend", Box::new(clutter_trend)),
        ("determinism", Box::new(determinism)),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in &criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1} s): {detail}");
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
