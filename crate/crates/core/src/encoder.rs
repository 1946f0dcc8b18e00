//! Trainable multi-layer self-attention encoder.
//!
//! Stands in for the pretrained contextual encoder with the same contract:
//! given an embedded sequence it produces one hidden-state matrix per block,
//! all of width `dim`. Blocks are the usual multi-head self-attention with
//! residual + layer norm, then a two-layer feed-forward with residual +
//! layer norm. Attention is fully bidirectional; there is no dropout, so
//! the forward pass is a pure function of (parameters, input).

use crate::tensor::{Tape, Tensor, TensorError, ValueId};
use serde::{Deserialize, Serialize};

/// Epsilon inside the layer-norm variance; small enough that normalized
/// rows keep |mean| < 1e-9 and variance within 1e-6 of 1.
pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Width multiplier of the feed-forward hidden layer.
pub const FFN_MULT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Number of blocks; the pyramid consumes one state per block.
    pub layers: usize,
    /// Shared embedding and hidden width.
    pub dim: usize,
    pub heads: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0 {
            return Err("encoder needs at least one layer".into());
        }
        if self.dim == 0 || self.heads == 0 {
            return Err("encoder dim and heads must be positive".into());
        }
        if self.dim % self.heads != 0 {
            return Err(format!(
                "encoder dim {} not divisible by {} heads",
                self.dim, self.heads
            ));
        }
        if self.max_len == 0 {
            return Err("max_len must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 4,
            dim: 64,
            heads: 4,
            max_len: 64,
        }
    }
}

/// Which rule initializes a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Dense projection matrix: Glorot-uniform.
    Weight,
    /// Additive vector: zeros.
    Bias,
    /// Layer-norm scale: ones.
    Gain,
    /// Token / position lookup table: N(0, 0.02).
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

impl LayerParams {
    pub fn zeros(dim: usize) -> Self {
        let ffn = dim * FFN_MULT;
        LayerParams {
            w_q: Tensor::zeros(vec![dim, dim]),
            w_k: Tensor::zeros(vec![dim, dim]),
            w_v: Tensor::zeros(vec![dim, dim]),
            w_o: Tensor::zeros(vec![dim, dim]),
            ln1_gain: Tensor::zeros(vec![dim]),
            ln1_bias: Tensor::zeros(vec![dim]),
            ffn_w1: Tensor::zeros(vec![dim, ffn]),
            ffn_b1: Tensor::zeros(vec![ffn]),
            ffn_w2: Tensor::zeros(vec![ffn, dim]),
            ffn_b2: Tensor::zeros(vec![dim]),
            ln2_gain: Tensor::zeros(vec![dim]),
            ln2_bias: Tensor::zeros(vec![dim]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    /// vocab_size x dim token table.
    pub embedding: Tensor,
    /// max_len x dim learned position table.
    pub positional: Tensor,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn zeros(config: EncoderConfig, vocab_size: usize) -> Self {
        EncoderParams {
            config,
            embedding: Tensor::zeros(vec![vocab_size, config.dim]),
            positional: Tensor::zeros(vec![config.max_len, config.dim]),
            layers: (0..config.layers)
                .map(|_| LayerParams::zeros(config.dim))
                .collect(),
        }
    }

    pub fn for_each(&self, f: &mut impl FnMut(String, ParamKind, &Tensor)) {
        f("encoder.embedding".into(), ParamKind::Embedding, &self.embedding);
        f("encoder.positional".into(), ParamKind::Embedding, &self.positional);
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("encoder.layer{i}.{s}");
            f(p("w_q"), ParamKind::Weight, &l.w_q);
            f(p("w_k"), ParamKind::Weight, &l.w_k);
            f(p("w_v"), ParamKind::Weight, &l.w_v);
            f(p("w_o"), ParamKind::Weight, &l.w_o);
            f(p("ln1_gain"), ParamKind::Gain, &l.ln1_gain);
            f(p("ln1_bias"), ParamKind::Bias, &l.ln1_bias);
            f(p("ffn_w1"), ParamKind::Weight, &l.ffn_w1);
            f(p("ffn_b1"), ParamKind::Bias, &l.ffn_b1);
            f(p("ffn_w2"), ParamKind::Weight, &l.ffn_w2);
            f(p("ffn_b2"), ParamKind::Bias, &l.ffn_b2);
            f(p("ln2_gain"), ParamKind::Gain, &l.ln2_gain);
            f(p("ln2_bias"), ParamKind::Bias, &l.ln2_bias);
        }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(String, ParamKind, &mut Tensor)) {
        f("encoder.embedding".into(), ParamKind::Embedding, &mut self.embedding);
        f("encoder.positional".into(), ParamKind::Embedding, &mut self.positional);
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |s: &str| format!("encoder.layer{i}.{s}");
            f(p("w_q"), ParamKind::Weight, &mut l.w_q);
            f(p("w_k"), ParamKind::Weight, &mut l.w_k);
            f(p("w_v"), ParamKind::Weight, &mut l.w_v);
            f(p("w_o"), ParamKind::Weight, &mut l.w_o);
            f(p("ln1_gain"), ParamKind::Gain, &mut l.ln1_gain);
            f(p("ln1_bias"), ParamKind::Bias, &mut l.ln1_bias);
            f(p("ffn_w1"), ParamKind::Weight, &mut l.ffn_w1);
            f(p("ffn_b1"), ParamKind::Bias, &mut l.ffn_b1);
            f(p("ffn_w2"), ParamKind::Weight, &mut l.ffn_w2);
            f(p("ffn_b2"), ParamKind::Bias, &mut l.ffn_b2);
            f(p("ln2_gain"), ParamKind::Gain, &mut l.ln2_gain);
            f(p("ln2_bias"), ParamKind::Bias, &mut l.ln2_bias);
        }
    }
}

/// Tape handles for one registered block.
#[derive(Debug, Clone, Copy)]
pub struct LayerIds {
    pub w_q: ValueId,
    pub w_k: ValueId,
    pub w_v: ValueId,
    pub w_o: ValueId,
    pub ln1_gain: ValueId,
    pub ln1_bias: ValueId,
    pub ffn_w1: ValueId,
    pub ffn_b1: ValueId,
    pub ffn_w2: ValueId,
    pub ffn_b2: ValueId,
    pub ln2_gain: ValueId,
    pub ln2_bias: ValueId,
}

#[derive(Debug, Clone)]
pub struct EncoderIds {
    pub embedding: ValueId,
    pub positional: ValueId,
    pub layers: Vec<LayerIds>,
}

pub fn register(tape: &mut Tape, params: &EncoderParams) -> EncoderIds {
    EncoderIds {
        embedding: tape.leaf(&params.embedding),
        positional: tape.leaf(&params.positional),
        layers: params
            .layers
            .iter()
            .map(|l| LayerIds {
                w_q: tape.leaf(&l.w_q),
                w_k: tape.leaf(&l.w_k),
                w_v: tape.leaf(&l.w_v),
                w_o: tape.leaf(&l.w_o),
                ln1_gain: tape.leaf(&l.ln1_gain),
                ln1_bias: tape.leaf(&l.ln1_bias),
                ffn_w1: tape.leaf(&l.ffn_w1),
                ffn_b1: tape.leaf(&l.ffn_b1),
                ffn_w2: tape.leaf(&l.ffn_w2),
                ffn_b2: tape.leaf(&l.ffn_b2),
                ln2_gain: tape.leaf(&l.ln2_gain),
                ln2_bias: tape.leaf(&l.ln2_bias),
            })
            .collect(),
    }
}

/// Per-layer hidden states H^1..H^L, each n x dim.
#[derive(Debug, Clone)]
pub struct LayerStates(pub Vec<ValueId>);

impl LayerStates {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Token embedding plus learned positional embedding, row per position.
pub fn embed(
    tape: &mut Tape,
    ids: &EncoderIds,
    tokens: &[u32],
) -> Result<ValueId, TensorError> {
    let indices: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let tok = tape.gather_rows(ids.embedding, &indices)?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let pos = tape.gather_rows(ids.positional, &positions)?;
    tape.add(tok, pos)
}

/// Runs the block stack, returning every block's output state.
pub fn encode(
    tape: &mut Tape,
    config: &EncoderConfig,
    ids: &EncoderIds,
    input: ValueId,
) -> Result<LayerStates, TensorError> {
    Ok(encode_traced(tape, config, ids, input)?.0)
}

/// Like [`encode`] but also returns every attention matrix (layer-major,
/// head-minor), so tests can verify each row is a distribution.
pub fn encode_traced(
    tape: &mut Tape,
    config: &EncoderConfig,
    ids: &EncoderIds,
    input: ValueId,
) -> Result<(LayerStates, Vec<ValueId>), TensorError> {
    let dk = config.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut x = input;
    let mut states = Vec::with_capacity(config.layers);
    let mut attentions = Vec::new();

    for layer in &ids.layers {
        let q = tape.matmul(x, layer.w_q)?;
        let k = tape.matmul(x, layer.w_k)?;
        let v = tape.matmul(x, layer.w_v)?;

        let mut head_outputs = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            let qh = tape.slice_cols(q, h * dk, dk)?;
            let kh = tape.slice_cols(k, h * dk, dk)?;
            let vh = tape.slice_cols(v, h * dk, dk)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled)?;
            attentions.push(attn);
            head_outputs.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat_last(&head_outputs)?;
        let projected = tape.matmul(merged, layer.w_o)?;
        let res1 = tape.add(x, projected)?;
        x = tape.layer_norm(res1, layer.ln1_gain, layer.ln1_bias, LAYER_NORM_EPS)?;

        let pre1 = tape.matmul(x, layer.ffn_w1)?;
        let hid = tape.add_row(pre1, layer.ffn_b1)?;
        let act = tape.relu(hid);
        let pre2 = tape.matmul(act, layer.ffn_w2)?;
        let ffn = tape.add_row(pre2, layer.ffn_b2)?;
        let res2 = tape.add(x, ffn)?;
        x = tape.layer_norm(res2, layer.ln2_gain, layer.ln2_bias, LAYER_NORM_EPS)?;

        states.push(x);
    }
    Ok((LayerStates(states), attentions))
}
