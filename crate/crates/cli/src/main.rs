use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracker_core::dda::{match_tracks_with, AssociationMatrix, ClutterTarget};
use tracker_core::metrics::{taa, tgospa, BaseMetric, TgospaParams, TrajectorySet};
use tracker_core::pipeline::{self, EvalMode, RunConfig};

#[derive(Parser)]
#[command(
    name = "tracker",
    version,
    about = "Simulate, train and score the two-stage tracker"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (JSON). Defaults to the desk preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named run preset: `desk` or `full-task1` .. `full-task10`.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                RunConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?
            }
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::desk(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated scenes to `<out>/scenes.jsonl`.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 100)]
        scenes: usize,
    },
    /// Train the associator; writes `<out>/dda/` and `<out>/dda_loss.csv`.
    TrainDda {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train the smoother on the frozen associator in `<out>/dda/`.
    TrainDs {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score trained models; writes `<out>/report-<mode>.{json,csv}`.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "predicted", value_parser = ["predicted", "gt-assoc"])]
        mode: String,
        /// Defaults to the config's evaluation size.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// TGOSPA between two trajectory-set files.
    Tgospa {
        truth: PathBuf,
        estimate: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        #[arg(long, default_value_t = 20.0)]
        c: f64,
        #[arg(long, default_value_t = 2.0)]
        gamma: f64,
        #[arg(long, default_value = "l1", value_parser = ["l1", "l2"])]
        base: String,
        /// Write the result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-1 association accuracy of an association matrix (CSV) against
    /// labels (one integer per line, -1 for clutter).
    Taa {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "literal", value_parser = ["literal", "single_column"])]
        clutter_target: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_set(path: &Path) -> Result<TrajectorySet> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Simulate { run, scenes } => {
            let cfg = run.load()?;
            let path = pipeline::run_simulate(&cfg, &run.out, scenes)?;
            eprintln!("wrote {scenes} scenes to {}", path.display());
        }
        Command::TrainDda { run } => {
            let cfg = run.load()?;
            let outcome = pipeline::run_train_dda(&cfg, &run.out)?;
            let last = outcome.log.last().map_or(f64::NAN, |r| r.loss);
            eprintln!(
                "associator trained: {} steps, final loss {last}",
                outcome.log.len()
            );
        }
        Command::TrainDs { run } => {
            let cfg = run.load()?;
            let outcome = pipeline::run_train_ds(&cfg, &run.out)?;
            let last = outcome.log.last().map_or(f64::NAN, |r| r.loss);
            eprintln!(
                "smoother trained: {} steps, final loss {last}",
                outcome.log.len()
            );
        }
        Command::Evaluate { run, mode, scenes } => {
            let cfg = run.load()?;
            let mode: EvalMode = mode.parse()?;
            let n = scenes.unwrap_or(cfg.eval.scenes);
            let report = pipeline::run_evaluate(&cfg, &run.out, mode, n)?;
            emit(&serde_json::to_value(&report)?, None)?;
        }
        Command::Tgospa {
            truth,
            estimate,
            p,
            c,
            gamma,
            base,
            out,
        } => {
            let params = TgospaParams {
                p,
                c,
                gamma,
                base: if base == "l2" {
                    BaseMetric::L2
                } else {
                    BaseMetric::L1
                },
            };
            let result = tgospa(&read_set(&truth)?, &read_set(&estimate)?, &params)?;
            emit(
                &serde_json::json!({ "result": result, "params": params }),
                out.as_deref(),
            )?;
        }
        Command::Taa {
            matrix,
            labels,
            clutter_target,
            out,
        } => {
            let a = AssociationMatrix::read_csv(&fs::read_to_string(&matrix)?)?;
            let labels = fs::read_to_string(&labels)?
                .split_whitespace()
                .map(|s| s.parse::<i64>().with_context(|| format!("bad label {s:?}")))
                .collect::<Result<Vec<_>>>()?;
            if labels.len() != a.measurements() {
                bail!(
                    "{} labels for {} matrix rows",
                    labels.len(),
                    a.measurements()
                );
            }
            let mode = if clutter_target == "single_column" {
                ClutterTarget::SingleColumn
            } else {
                ClutterTarget::Literal
            };
            let m = match_tracks_with(&a, &labels, mode)?;
            let value = taa(&a, &labels, &m)?;
            emit(
                &serde_json::json!({ "taa": value, "s_star": m.s_star }),
                out.as_deref(),
            )?;
        }
    }
    Ok(())
}
