//! Transformer encoder with learnable positional lookup, added at the start of
//! every block.
//!
//! Sequences are stored one element per row (`n x d`). Attention weights keep
//! the column-vector orientation: `W_Q` is `d x d` and maps an element `a` to
//! `W_Q a`, so the row-layout queries are `X W_Q^T`. Every head projects to the
//! full width `d`; the output map `W_O` is `d x (d * heads)`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::layers::{LayerNorm, Linear};
use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;
use super::NnError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
    pub max_positions: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = self.d_model > 0
            && self.heads >= 1
            && self.blocks >= 1
            && self.ffn_hidden > 0
            && (0.0..1.0).contains(&self.dropout)
            && self.max_positions > 0;
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Train mode enables dropout and draws masks from the supplied stream.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: Vec<AttentionHead>,
    pub w_o: ParamId,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamSet, name: &str, d: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let heads = (0..heads)
            .map(|h| AttentionHead {
                w_q: ps.add(
                    format!("{name}.head{h}.w_q"),
                    ParamSet::uniform_init(d, d, d, rng),
                ),
                w_k: ps.add(
                    format!("{name}.head{h}.w_k"),
                    ParamSet::uniform_init(d, d, d, rng),
                ),
                w_v: ps.add(
                    format!("{name}.head{h}.w_v"),
                    ParamSet::uniform_init(d, d, d, rng),
                ),
            })
            .collect::<Vec<_>>();
        let fan_in = d * heads.len();
        let w_o = ps.add(
            format!("{name}.w_o"),
            ParamSet::uniform_init(d, fan_in, fan_in, rng),
        );
        Self {
            heads,
            w_o,
            d_model: d,
        }
    }

    /// `x` is `n x d`; returns `n x d`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let scale = 1.0 / (self.d_model as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (wq, wk, wv) = (g.param(head.w_q), g.param(head.w_k), g.param(head.w_v));
            let q = g.matmul_nt(x, wq)?;
            let k = g.matmul_nt(x, wk)?;
            let v = g.matmul_nt(x, wv)?;
            // Row i of the scores holds query i against every key, so the
            // row softmax here is the column softmax of K^T Q.
            let scores = g.matmul_nt(q, k)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax_rows(scores);
            outs.push(g.matmul(weights, v)?);
        }
        let stacked = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        let wo = g.param(self.w_o);
        g.matmul_nt(stacked, wo)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm_attn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm_ffn: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub blocks: Vec<EncoderBlock>,
    pub positional: ParamId,
}

impl Encoder {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        config: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        config.validate()?;
        let d = config.d_model;
        let positional = ps.add(
            format!("{name}.positional"),
            ParamSet::normal_init(config.max_positions, d, 0.02, rng),
        );
        let blocks = (0..config.blocks)
            .map(|b| {
                let p = format!("{name}.block{b}");
                EncoderBlock {
                    attention: MultiHeadAttention::new(
                        ps,
                        &format!("{p}.attn"),
                        d,
                        config.heads,
                        rng,
                    ),
                    norm_attn: LayerNorm::new(ps, &format!("{p}.norm_attn"), d),
                    ffn_in: Linear::new(ps, &format!("{p}.ffn_in"), d, config.ffn_hidden, rng),
                    ffn_out: Linear::new(ps, &format!("{p}.ffn_out"), config.ffn_hidden, d, rng),
                    norm_ffn: LayerNorm::new(ps, &format!("{p}.norm_ffn"), d),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            blocks,
            positional,
        })
    }

    /// Runs all blocks on `x` (`n x d`); `positions[i]` indexes the lookup
    /// table for element `i`.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        positions: &[usize],
        mode: &mut Mode,
    ) -> Result<Var, NnError> {
        let table = g.param(self.positional);
        let q = g.gather_rows(table, positions)?;
        let keep = 1.0 - self.config.dropout;
        let mut a = x;
        for block in &self.blocks {
            let a_tilde = g.add(a, q)?;
            let b = block.attention.forward(g, a_tilde)?;
            let res = g.add(a_tilde, b)?;
            let b_tilde = block.norm_attn.forward(g, res)?;
            let h = block.ffn_in.forward(g, b_tilde)?;
            let mut h = g.relu(h);
            if let Mode::Train(rng) = mode {
                if self.config.dropout > 0.0 {
                    let shape = g.value(h).shape().to_vec();
                    let n: usize = shape.iter().product();
                    let mask = (0..n)
                        .map(|_| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let mask = g.input(Tensor::new(shape, mask)?);
                    h = g.mul(h, mask)?;
                }
            }
            let f = block.ffn_out.forward(g, h)?;
            let res = g.add(b_tilde, f)?;
            a = block.norm_ffn.forward(g, res)?;
        }
        Ok(a)
    }
}

/// Multihead self-attention on a `d x n` matrix whose columns are the
/// sequence elements; returns the `d x n` output.
pub fn multihead_self_attention(
    params: &ParamSet,
    attention: &MultiHeadAttention,
    a: &Tensor,
) -> Result<Tensor, NnError> {
    if a.rows() != attention.d_model {
        return Err(NnError::ShapeMismatch(format!(
            "attention width {} given {}x{} input",
            attention.d_model,
            a.rows(),
            a.cols()
        )));
    }
    let mut g = Graph::new(params);
    let x = g.input(a.transpose());
    let out = attention.forward(&mut g, x)?;
    Ok(g.value(out).transpose())
}

/// Encodes the rows of `inputs` (`n x d`) at the given positions.
pub fn encoder_forward(
    params: &ParamSet,
    encoder: &Encoder,
    inputs: &Tensor,
    positions: &[usize],
    mode: &mut Mode,
) -> Result<Tensor, NnError> {
    if inputs.cols() != encoder.config.d_model || inputs.rows() != positions.len() {
        return Err(NnError::ShapeMismatch(format!(
            "encoder width {} given {}x{} input with {} positions",
            encoder.config.d_model,
            inputs.rows(),
            inputs.cols(),
            positions.len()
        )));
    }
    let mut g = Graph::new(params);
    let x = g.input(inputs.clone());
    let out = encoder.forward(&mut g, x, positions, mode)?;
    Ok(g.value(out).clone())
}
