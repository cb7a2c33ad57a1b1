use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::matching::AssociationMatrix;
use super::DdaError;
use crate::nn::{
    checkpoint, Encoder, EncoderConfig, Graph, Linear, Mlp, Mode, ParamSet, Tensor, Var,
};
use crate::sim::{Fov, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdaConfig {
    /// `max_positions` is the window length.
    pub encoder: EncoderConfig,
    /// `B`, the number of output tracks.
    pub max_tracks: usize,
    /// Hidden widths of the per-measurement head.
    pub head_hidden: Vec<usize>,
    /// Box used to scale raw measurements to roughly `[-1, 1]`.
    #[serde(default)]
    pub input_box: Fov,
}

impl DdaConfig {
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
            max_tracks: 20,
            head_hidden: vec![128, 128],
            input_box: Fov::default(),
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
            max_tracks: 8,
            head_hidden: vec![32, 32],
            input_box: Fov::default(),
        }
    }

    pub fn window(&self) -> usize {
        self.encoder.max_positions
    }
}

#[derive(Clone, Debug)]
pub struct DdaModel {
    pub config: DdaConfig,
    pub params: ParamSet,
    input: Linear,
    encoder: Encoder,
    head: Mlp,
}

pub(crate) fn normalize(z: [f64; 3], bounds: &Fov) -> [f64; 3] {
    let iv = [bounds.range, bounds.doppler, bounds.bearing];
    std::array::from_fn(|k| (2.0 * z[k] - iv[k].lo - iv[k].hi) / iv[k].width())
}

impl DdaModel {
    pub const KIND: &'static str = "dda";

    pub fn new(config: DdaConfig, rng: &mut impl Rng) -> Result<Self, DdaError> {
        if config.max_tracks == 0 {
            return Err(DdaError::ShapeMismatch(
                "at least one track required".into(),
            ));
        }
        let mut params = ParamSet::default();
        let d = config.encoder.d_model;
        let input = Linear::new(&mut params, "dda.input", 3, d, rng);
        let encoder = Encoder::new(&mut params, "dda.encoder", &config.encoder, rng)?;
        let head = Mlp::new(
            &mut params,
            "dda.head",
            d,
            &config.head_hidden,
            config.max_tracks,
            rng,
        );
        Ok(Self {
            config,
            params,
            input,
            encoder,
            head,
        })
    }

    pub fn tracks(&self) -> usize {
        self.config.max_tracks
    }

    /// Records the forward pass on `g` (which must borrow `self.params`) and
    /// returns the `n x B` node of row pmfs.
    pub fn forward(
        &self,
        g: &mut Graph,
        z: &[[f64; 3]],
        times: &[usize],
        mode: &mut Mode,
    ) -> Result<Var, DdaError> {
        if z.is_empty() {
            return Err(DdaError::EmptyInput);
        }
        if z.len() != times.len() {
            return Err(DdaError::ShapeMismatch(format!(
                "{} measurements, {} times",
                z.len(),
                times.len()
            )));
        }
        let window = self.config.window();
        let positions = times
            .iter()
            .map(|&t| {
                if (1..=window).contains(&t) {
                    Ok(t - 1)
                } else {
                    Err(DdaError::TimeOutOfRange { t, window })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let data = z
            .iter()
            .flat_map(|&zi| normalize(zi, &self.config.input_box))
            .collect();
        let x = g.input(Tensor::matrix(z.len(), 3, data));
        let h = self.input.forward(g, x)?;
        let e = self.encoder.forward(g, h, &positions, mode)?;
        let logits = self.head.forward(g, e)?;
        Ok(g.softmax_rows(logits))
    }

    /// Eval-mode association matrix.
    pub fn associate(
        &self,
        z: &[[f64; 3]],
        times: &[usize],
    ) -> Result<AssociationMatrix, DdaError> {
        let mut g = Graph::new(&self.params);
        let probs = self.forward(&mut g, z, times, &mut Mode::Eval)?;
        AssociationMatrix::new(g.value(probs).clone())
    }

    pub fn associate_scene(&self, scene: &Scene) -> Result<AssociationMatrix, DdaError> {
        let z: Vec<_> = scene.measurements.iter().map(|m| m.z).collect();
        self.associate(&z, &scene.times())
    }

    pub fn save(&self, dir: &Path) -> Result<(), DdaError> {
        let meta = json!({ "kind": Self::KIND, "config": self.config });
        checkpoint::save(dir, &self.params, Some(&meta))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DdaError> {
        let (params, meta) = checkpoint::load(dir)?;
        let wrong = DdaError::WrongCheckpoint {
            expected: Self::KIND,
        };
        let meta = meta.ok_or(DdaError::WrongCheckpoint {
            expected: Self::KIND,
        })?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some(Self::KIND) {
            return Err(wrong);
        }
        let config: DdaConfig =
            serde_json::from_value(meta["config"].clone()).map_err(crate::nn::NnError::from)?;
        // Structure only; the values are replaced by the checkpoint.
        let mut model = Self::new(config, &mut crate::rng::stream(0, "dda-skeleton", 0))?;
        model.params.load_from(&params)?;
        Ok(model)
    }
}
