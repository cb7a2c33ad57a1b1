//! Multi-object tracking by decoupled data association and smoothing.
//!
//! A transformer associator assigns every measurement of a window to one of
//! `B` tracks; a greedy partitioner turns the association matrix into
//! fixed-length tracks; a transformer smoother maps each track to a
//! multi-Bernoulli trajectory component. The crate also contains the
//! simulator used to train both networks, their losses, and the TGOSPA and
//! top-1 association accuracy measures used to score them.

pub mod dda;
pub mod metrics;
pub mod nn;
pub mod partition;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod smoother;

pub use dda::{AssociationMatrix, ClutterTarget, MatchResult, TargetMatrix};
pub use metrics::{TgospaParams, TgospaResult};
pub use partition::{Track, TrackSlot};
pub use sim::{GroundTruthTrajectory, Measurement, Scene, SingleState, TaskConfig};
pub use smoother::{ExtractedTrajectory, TrajectoryEstimate};
