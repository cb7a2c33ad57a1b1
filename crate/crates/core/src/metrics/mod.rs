//! TGOSPA distance between sets of trajectories, and top-1 association
//! accuracy.

mod tgospa;

pub use tgospa::{tgospa, tgospa_bruteforce, BRUTE_FORCE_MAX_TIME, BRUTE_FORCE_MAX_TRAJECTORIES};

use serde::{Deserialize, Serialize};

use crate::dda::{AssociationMatrix, MatchResult};
use crate::sim::{Scene, CLUTTER_LABEL};
use crate::smoother::ExtractedTrajectory;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("trajectory sets over windows {0} and {1}")]
    WindowMismatch(usize, usize),
    #[error("trajectory starting at {t_s} with {len} states leaves the window 1..={window}")]
    OutsideWindow {
        t_s: usize,
        len: usize,
        window: usize,
    },
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("invalid TGOSPA parameters: {0}")]
    InvalidParams(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("LP solver: {0}")]
    Solver(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMetric {
    #[default]
    L1,
    L2,
}

impl BaseMetric {
    pub fn distance(self, a: &[f64; 4], b: &[f64; 4]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| x - y);
        match self {
            BaseMetric::L1 => diffs.map(f64::abs).sum(),
            BaseMetric::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TgospaParams {
    pub p: f64,
    pub c: f64,
    pub gamma: f64,
    #[serde(default)]
    pub base: BaseMetric,
}

impl Default for TgospaParams {
    fn default() -> Self {
        Self {
            p: 1.0,
            c: 20.0,
            gamma: 2.0,
            base: BaseMetric::L1,
        }
    }
}

impl TgospaParams {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.p >= 1.0
            && self.c > 0.0
            && self.gamma > 0.0
            && self.c.is_finite()
            && self.gamma.is_finite()
        {
            Ok(())
        } else {
            Err(MetricError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Components are contributions to the `p`-th power of the distance; for
/// `p = 1` they sum to `total`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TgospaResult {
    pub total: f64,
    pub loc: f64,
    pub miss: f64,
    #[serde(rename = "false")]
    pub false_: f64,
    pub switch: f64,
}

/// A set of trajectories over the window `1..=window`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySet {
    pub window: usize,
    pub trajectories: Vec<ExtractedTrajectory>,
}

impl TrajectorySet {
    pub fn new(window: usize, trajectories: Vec<ExtractedTrajectory>) -> Self {
        Self {
            window,
            trajectories,
        }
    }

    pub fn truths(scene: &Scene) -> Self {
        Self::new(
            scene.config.window,
            scene.truths.iter().map(Into::into).collect(),
        )
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        for tr in &self.trajectories {
            if tr.t_s < 1 || tr.states.is_empty() || tr.t_s + tr.states.len() - 1 > self.window {
                return Err(MetricError::OutsideWindow {
                    t_s: tr.t_s,
                    len: tr.states.len(),
                    window: self.window,
                });
            }
        }
        Ok(())
    }
}

/// Object-originated measurements whose row-argmax track is matched to
/// their object, and the number of object-originated measurements.
pub fn taa_counts(
    a: &AssociationMatrix,
    labels: &[i64],
    m: &MatchResult,
) -> Result<(usize, usize), MetricError> {
    if labels.len() != a.measurements() || m.s_star.len() != a.tracks() {
        return Err(MetricError::ShapeMismatch(format!(
            "{} labels and {} matched tracks for a {}x{} matrix",
            labels.len(),
            m.s_star.len(),
            a.measurements(),
            a.tracks()
        )));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, &b) in labels.iter().enumerate() {
        if b == CLUTTER_LABEL {
            continue;
        }
        total += 1;
        if m.s_star[a.row_argmax(i)] == b {
            hits += 1;
        }
    }
    Ok((hits, total))
}

/// Fraction of object-originated measurements whose row-argmax track is
/// matched to their object; `None` when there is no such measurement.
pub fn taa(
    a: &AssociationMatrix,
    labels: &[i64],
    m: &MatchResult,
) -> Result<Option<f64>, MetricError> {
    let (hits, total) = taa_counts(a, labels, m)?;
    Ok((total > 0).then(|| hits as f64 / total as f64))
}
