//! Deep data associator: a transformer over the measurements of a window that
//! outputs, for every measurement, a pmf over `B` tracks.

pub mod assignment;
pub mod loss;
pub mod matching;
pub mod model;

pub use assignment::{brute_force_assignment, min_cost_assignment};
pub use loss::{dda_loss, dda_loss_var, rematched_loss, LOG_FLOOR};
pub use matching::{
    build_target_matrix, match_tracks_to_objects, match_tracks_with, AssociationMatrix,
    ClutterTarget, MatchResult, TargetMatrix,
};
pub use model::{DdaConfig, DdaModel};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum DdaError {
    #[error("no measurements to associate")]
    EmptyInput,
    #[error("measurement time {t} outside 1..={window}")]
    TimeOutOfRange { t: usize, window: usize },
    #[error("{objects} objects cannot be matched to {tracks} tracks")]
    Capacity { objects: usize, tracks: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("row {0} is not a pmf")]
    NotStochastic(usize),
    #[error("association matrix: {0}")]
    Parse(String),
    #[error("checkpoint is not a {expected} model")]
    WrongCheckpoint { expected: &'static str },
    #[error(transparent)]
    Nn(#[from] NnError),
}
