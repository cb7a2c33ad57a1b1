use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{preprocess_slot, SmootherError, TrajectoryEstimate};
use crate::nn::{
    checkpoint, Encoder, EncoderConfig, Graph, Linear, Mlp, Mode, ParamId, ParamSet, Tensor, Var,
};
use crate::partition::{Track, TrackSlot};
use crate::sim::GroundTruthTrajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsConfig {
    /// `max_positions` is the window length.
    pub encoder: EncoderConfig,
    pub position_hidden: Vec<usize>,
    pub velocity_hidden: Vec<usize>,
    pub existence_hidden: Vec<usize>,
    pub trajectory_hidden: Vec<usize>,
    /// Metres per unit of the position channels (input and output).
    #[serde(default = "default_position_scale")]
    pub position_scale: f64,
    /// Metres per second per unit of the velocity channels.
    #[serde(default = "default_velocity_scale")]
    pub velocity_scale: f64,
}

fn default_position_scale() -> f64 {
    10.0
}

fn default_velocity_scale() -> f64 {
    5.0
}

impl DsConfig {
    pub fn full(window: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                d_model: 128,
                heads: 8,
                blocks: 6,
                ffn_hidden: 2048,
                dropout: 0.1,
                max_positions: window,
            },
            position_hidden: vec![128, 128],
            velocity_hidden: vec![128, 128],
            existence_hidden: vec![64],
            trajectory_hidden: vec![64],
            position_scale: default_position_scale(),
            velocity_scale: default_velocity_scale(),
        }
    }

    pub fn desk(window: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                d_model: 32,
                heads: 2,
                blocks: 2,
                ffn_hidden: 64,
                dropout: 0.1,
                max_positions: window,
            },
            position_hidden: vec![32, 32],
            velocity_hidden: vec![32, 32],
            existence_hidden: vec![32],
            trajectory_hidden: vec![32],
            position_scale: default_position_scale(),
            velocity_scale: default_velocity_scale(),
        }
    }

    pub fn window(&self) -> usize {
        self.encoder.max_positions
    }
}

/// Per-slot input: scaled `preprocess_slot(z)` and the confidence; zeros for
/// dummy slots.
pub fn slot_features(slot: &TrackSlot, config: &DsConfig) -> [f64; 4] {
    match *slot {
        TrackSlot::Measured { z, confidence, .. } => {
            let [x, y, rdot] = preprocess_slot(z);
            [
                x / config.position_scale,
                y / config.position_scale,
                rdot / config.velocity_scale,
                confidence,
            ]
        }
        TrackSlot::Dummy => [0.0; 4],
    }
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct DsOutput {
    /// `T x 4` states in physical units.
    pub states: Var,
    /// `T x 1` per-step existence logits.
    pub p_logits: Var,
    /// `1 x 1` trajectory existence logit.
    pub p_bar_logit: Var,
}

#[derive(Clone, Debug)]
pub struct DsModel {
    pub config: DsConfig,
    pub params: ParamSet,
    input: Linear,
    dummy: ParamId,
    encoder: Encoder,
    position: Mlp,
    velocity: Mlp,
    existence: Mlp,
    trajectory: Mlp,
}

impl DsModel {
    pub const KIND: &'static str = "ds";

    pub fn new(config: DsConfig, rng: &mut impl Rng) -> Result<Self, SmootherError> {
        let mut ps = ParamSet::default();
        let d = config.encoder.d_model;
        let t = config.window();
        let input = Linear::new(&mut ps, "ds.input", 4, d, rng);
        let dummy = ps.add("ds.dummy", ParamSet::normal_init(1, d, 0.02, rng));
        let encoder = Encoder::new(&mut ps, "ds.encoder", &config.encoder, rng)?;
        let position = Mlp::new(&mut ps, "ds.position", d, &config.position_hidden, 2, rng);
        let velocity = Mlp::new(&mut ps, "ds.velocity", d, &config.velocity_hidden, 2, rng);
        let existence = Mlp::new(&mut ps, "ds.existence", d, &config.existence_hidden, 1, rng);
        let trajectory = Mlp::new(
            &mut ps,
            "ds.trajectory",
            4 * t,
            &config.trajectory_hidden,
            1,
            rng,
        );
        Ok(Self {
            config,
            params: ps,
            input,
            dummy,
            encoder,
            position,
            velocity,
            existence,
            trajectory,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        track: &Track,
        mode: &mut Mode,
    ) -> Result<DsOutput, SmootherError> {
        let window = self.config.window();
        if track.slots.len() != window {
            return Err(SmootherError::WrongLength {
                expected: window,
                got: track.slots.len(),
            });
        }
        let features: Vec<[f64; 4]> = track
            .slots
            .iter()
            .map(|s| slot_features(s, &self.config))
            .collect();
        let measured: Vec<usize> = (0..window)
            .filter(|&k| track.slots[k].is_measured())
            .collect();

        // Rows of `table`: projected measured slots, then the dummy vector.
        let dummy = g.param(self.dummy);
        let table = if measured.is_empty() {
            dummy
        } else {
            let data = measured.iter().flat_map(|&k| features[k]).collect();
            let x = g.input(Tensor::matrix(measured.len(), 4, data));
            let projected = self.input.forward(g, x)?;
            g.concat_rows(&[projected, dummy])?
        };
        let mut next = 0;
        let lookup: Vec<usize> = track
            .slots
            .iter()
            .map(|s| {
                if s.is_measured() {
                    next += 1;
                    next - 1
                } else {
                    measured.len()
                }
            })
            .collect();
        let embedded = g.gather_rows(table, &lookup)?;
        let positions: Vec<usize> = (0..window).collect();
        let e = self.encoder.forward(g, embedded, &positions, mode)?;

        let pos = self.position.forward(g, e)?;
        let pos = g.scale(pos, self.config.position_scale);
        let vel = self.velocity.forward(g, e)?;
        let vel = g.scale(vel, self.config.velocity_scale);
        let states = g.concat_cols(&[pos, vel])?;
        let p_logits = self.existence.forward(g, e)?;

        let flat = g.input(Tensor::matrix(1, 4 * window, features.concat()));
        let p_bar_logit = self.trajectory.forward(g, flat)?;
        Ok(DsOutput {
            states,
            p_logits,
            p_bar_logit,
        })
    }

    pub fn estimate_from(g: &Graph, out: &DsOutput, source_column: usize) -> TrajectoryEstimate {
        let states = g.value(out.states);
        let x_hat = (0..states.rows())
            .map(|k| std::array::from_fn(|c| states.get(k, c)))
            .collect();
        TrajectoryEstimate::from_logits(
            x_hat,
            g.value(out.p_logits).data(),
            g.value(out.p_bar_logit).item(),
            source_column,
        )
    }

    /// Eval-mode estimate for one track.
    pub fn smooth(&self, track: &Track) -> Result<TrajectoryEstimate, SmootherError> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, track, &mut Mode::Eval)?;
        Ok(Self::estimate_from(&g, &out, track.source_column))
    }

    pub fn smooth_all(&self, tracks: &[Track]) -> Result<Vec<TrajectoryEstimate>, SmootherError> {
        tracks.iter().map(|t| self.smooth(t)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<(), SmootherError> {
        let meta = json!({ "kind": Self::KIND, "config": self.config });
        checkpoint::save(dir, &self.params, Some(&meta))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SmootherError> {
        let (params, meta) = checkpoint::load(dir)?;
        let wrong = || SmootherError::WrongCheckpoint {
            expected: Self::KIND,
        };
        let meta = meta.ok_or_else(wrong)?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some(Self::KIND) {
            return Err(wrong());
        }
        let config: DsConfig =
            serde_json::from_value(meta["config"].clone()).map_err(crate::nn::NnError::from)?;
        let mut model = Self::new(config, &mut crate::rng::stream(0, "ds-skeleton", 0))?;
        model.params.load_from(&params)?;
        Ok(model)
    }
}

/// Differentiable component loss on the nodes of one forward pass; see
/// [`super::component_loss`].
pub fn component_loss_var(
    g: &mut Graph,
    out: &DsOutput,
    truth: Option<&GroundTruthTrajectory>,
) -> Result<Var, SmootherError> {
    let Some(tr) = truth else {
        return Ok(g.softplus(out.p_bar_logit));
    };
    let window = g.value(out.states).rows();
    let mut target = Tensor::zeros(&[window, 4]);
    let mut alive4 = Tensor::zeros(&[window, 4]);
    let mut alive = Tensor::zeros(&[window, 1]);
    let mut dead = Tensor::zeros(&[window, 1]);
    for k in 0..window {
        match tr.state_at(k + 1) {
            Some(x) => {
                for c in 0..4 {
                    target.set(k, c, x.0[c]);
                    alive4.set(k, c, 1.0);
                }
                alive.set(k, 0, 1.0);
            }
            None => dead.set(k, 0, 1.0),
        }
    }
    let target = g.input(target);
    let alive4 = g.input(alive4);
    let alive = g.input(alive);
    let dead = g.input(dead);

    let diff = g.sub(out.states, target)?;
    let diff = g.mul(diff, alive4)?;
    let sq = g.mul(diff, diff)?;
    let sq = g.sum(sq);

    let neg = g.scale(out.p_logits, -1.0);
    let nll_alive = g.softplus(neg);
    let nll_alive = g.mul(nll_alive, alive)?;
    let nll_alive = g.sum(nll_alive);
    let nll_dead = g.softplus(out.p_logits);
    let nll_dead = g.mul(nll_dead, dead)?;
    let nll_dead = g.sum(nll_dead);

    let neg_bar = g.scale(out.p_bar_logit, -1.0);
    let exist = g.softplus(neg_bar);
    let mut total = g.add(sq, nll_alive)?;
    total = g.add(total, nll_dead)?;
    total = g.add(total, exist)?;
    Ok(total)
}
