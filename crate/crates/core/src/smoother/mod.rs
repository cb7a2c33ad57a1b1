//! Deep smoother: a transformer over the `T` slots of one track that outputs
//! a Bernoulli trajectory component, plus its loss and hard extraction.

pub mod model;

pub use model::{slot_features, DsConfig, DsModel, DsOutput};

use serde::{Deserialize, Serialize};

use crate::nn::graph::{sigmoid, softplus};
use crate::nn::NnError;
use crate::sim::GroundTruthTrajectory;

/// Trajectories are kept when `p_bar` exceeds this.
pub const P_BAR_THRESHOLD: f64 = 0.5;
/// Steps are kept when `p_t` exceeds this.
pub const P_T_THRESHOLD: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum SmootherError {
    #[error("track has {got} slots, expected {expected}")]
    WrongLength { expected: usize, got: usize },
    #[error("no match information for track column {0}")]
    MissingMatch(usize),
    #[error("matched object {0} has no ground-truth trajectory")]
    UnknownObject(i64),
    #[error("checkpoint is not a {expected} model")]
    WrongCheckpoint { expected: &'static str },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// `(x, y, rdot)` from `(r, rdot, theta)`.
pub fn preprocess_slot(z: [f64; 3]) -> [f64; 3] {
    let [r, rdot, theta] = z;
    [r * theta.cos(), r * theta.sin(), rdot]
}

/// One multi-Bernoulli component over a window of `T` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEstimate {
    pub x_hat: Vec<[f64; 4]>,
    pub p: Vec<f64>,
    pub p_bar: f64,
    /// Association column the input track came from.
    pub source_column: usize,
}

impl TrajectoryEstimate {
    pub fn window(&self) -> usize {
        self.p.len()
    }

    /// Builds the estimate from head outputs before the sigmoid.
    pub fn from_logits(
        x_hat: Vec<[f64; 4]>,
        p_logits: &[f64],
        p_bar_logit: f64,
        source_column: usize,
    ) -> Self {
        Self {
            x_hat,
            p: p_logits.iter().map(|&l| sigmoid(l)).collect(),
            p_bar: sigmoid(p_bar_logit),
            source_column,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractedTrajectory {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_bar: Option<f64>,
    pub t_s: usize,
    pub states: Vec<[f64; 4]>,
}

impl ExtractedTrajectory {
    pub fn t_end(&self) -> usize {
        self.t_s + self.states.len() - 1
    }

    pub fn state_at(&self, t: usize) -> Option<&[f64; 4]> {
        t.checked_sub(self.t_s).and_then(|k| self.states.get(k))
    }
}

impl From<&GroundTruthTrajectory> for ExtractedTrajectory {
    fn from(tr: &GroundTruthTrajectory) -> Self {
        Self {
            p_bar: None,
            t_s: tr.t_start,
            states: tr.states.iter().map(|s| s.0).collect(),
        }
    }
}

fn squared_distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Negative log-likelihood of one component: `-log(1 - p_bar)` when it
/// explains no object, otherwise `-log p_bar` plus, per step,
/// `|x_hat - x|^2 - log p_t` while the object exists and `-log(1 - p_t)`
/// otherwise.
pub fn component_loss(est: &TrajectoryEstimate, truth: Option<&GroundTruthTrajectory>) -> f64 {
    match truth {
        None => -(1.0 - est.p_bar).ln(),
        Some(tr) => {
            let mut loss = -est.p_bar.ln();
            for (k, (x_hat, &p)) in est.x_hat.iter().zip(&est.p).enumerate() {
                loss += match tr.state_at(k + 1) {
                    Some(x) => squared_distance(x_hat, &x.0) - p.ln(),
                    None => -(1.0 - p).ln(),
                };
            }
            loss
        }
    }
}

/// Same as [`component_loss`] but from logits, stable for saturated heads.
pub fn component_loss_from_logits(
    x_hat: &[[f64; 4]],
    p_logits: &[f64],
    p_bar_logit: f64,
    truth: Option<&GroundTruthTrajectory>,
) -> f64 {
    match truth {
        None => softplus(p_bar_logit),
        Some(tr) => {
            let mut loss = softplus(-p_bar_logit);
            for (k, (xh, &l)) in x_hat.iter().zip(p_logits).enumerate() {
                loss += match tr.state_at(k + 1) {
                    Some(x) => squared_distance(xh, &x.0) + softplus(-l),
                    None => softplus(l),
                };
            }
            loss
        }
    }
}

/// Resolves the object matched to each estimate via `s_star[source_column]`.
pub fn matched_truths<'a>(
    estimates: &[TrajectoryEstimate],
    truths: &'a [GroundTruthTrajectory],
    s_star: &[i64],
) -> Result<Vec<Option<&'a GroundTruthTrajectory>>, SmootherError> {
    estimates
        .iter()
        .map(|est| {
            let &id = s_star
                .get(est.source_column)
                .ok_or(SmootherError::MissingMatch(est.source_column))?;
            if id < 0 {
                return Ok(None);
            }
            truths
                .iter()
                .find(|t| t.object_id == id)
                .map(Some)
                .ok_or(SmootherError::UnknownObject(id))
        })
        .collect()
}

/// Sum of [`component_loss`] over the estimates, in order.
pub fn ds_loss(
    estimates: &[TrajectoryEstimate],
    truths: &[GroundTruthTrajectory],
    s_star: &[i64],
) -> Result<f64, SmootherError> {
    let matched = matched_truths(estimates, truths, s_star)?;
    Ok(estimates
        .iter()
        .zip(matched)
        .map(|(e, t)| component_loss(e, t))
        .sum())
}

/// Keeps components with `p_bar > p_bar_min`, spanning the first to the last
/// step with `p_t > p_t_min` (inclusive, interior steps kept).
pub fn extract_with(
    estimates: &[TrajectoryEstimate],
    p_bar_min: f64,
    p_t_min: f64,
) -> Vec<ExtractedTrajectory> {
    estimates
        .iter()
        .filter(|e| e.p_bar > p_bar_min)
        .filter_map(|e| {
            let first = e.p.iter().position(|&p| p > p_t_min)?;
            let last = e.p.iter().rposition(|&p| p > p_t_min)?;
            Some(ExtractedTrajectory {
                p_bar: Some(e.p_bar),
                t_s: first + 1,
                states: e.x_hat[first..=last].to_vec(),
            })
        })
        .collect()
}

pub fn extract_trajectories(estimates: &[TrajectoryEstimate]) -> Vec<ExtractedTrajectory> {
    extract_with(estimates, P_BAR_THRESHOLD, P_T_THRESHOLD)
}
