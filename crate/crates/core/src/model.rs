//! End-to-end model assembly: embed -> encode -> pyramid -> graph -> gnn ->
//! readout -> classify, with optional cross-entropy loss on one tape.

use crate::encoder::{self, EncoderConfig, EncoderIds, EncoderParams, LayerStates, ParamKind};
use crate::gnn::{self, GnnParams};
use crate::graph::{self, GraphError, TextGraph, TopologyCache};
use crate::head::{self, ClassifierIds, ClassifierParams, Prediction};
use crate::pyramid::{self, FusedFeatures, PyramidIds, PyramidLevel, PyramidParams};
use crate::tensor::{Activation, Tape, Tensor, TensorError, ValueId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// Structural hyperparameters resolved against a dataset (vocabulary size
/// and class count come from the data, not the config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub pyramid_dim: usize,
    /// Output width of each graph-convolution layer.
    pub gnn_dims: Vec<usize>,
    pub graph_window: usize,
    /// `Some(k)` unions k nearest cosine neighbors into the window graph.
    pub knn: Option<usize>,
    pub vocab_size: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoder.validate().map_err(ModelError::Config)?;
        if self.pyramid_dim == 0 {
            return Err(ModelError::Config("pyramid_dim must be positive".into()));
        }
        if self.gnn_dims.is_empty() {
            return Err(ModelError::Config("gnn needs at least one layer".into()));
        }
        if self.gnn_dims.iter().any(|&d| d == 0) {
            return Err(ModelError::Config("gnn layer widths must be positive".into()));
        }
        if self.graph_window < 2 {
            return Err(ModelError::Config(format!(
                "graph window must be >= 2, got {}",
                self.graph_window
            )));
        }
        if self.vocab_size < 2 {
            return Err(ModelError::Config("vocabulary needs PAD and UNK".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Config(format!(
                "need >= 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn gnn_output_dim(&self) -> usize {
        *self.gnn_dims.last().expect("validated non-empty")
    }
}

/// Every trainable tensor of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub pyramid: PyramidParams,
    pub gnn: GnnParams,
    pub classifier: ClassifierParams,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        ModelParams {
            encoder: EncoderParams::zeros(config.encoder, config.vocab_size),
            pyramid: PyramidParams::zeros(
                config.encoder.layers,
                config.encoder.dim,
                config.pyramid_dim,
            ),
            gnn: GnnParams::zeros(config.pyramid_dim, &config.gnn_dims),
            classifier: ClassifierParams::zeros(config.gnn_output_dim(), config.num_classes),
        }
    }

    /// Visits every tensor in the canonical order used for initialization,
    /// gradient accumulation, optimizer state, and serialization.
    pub fn for_each(&self, f: &mut impl FnMut(String, ParamKind, &Tensor)) {
        self.encoder.for_each(f);
        self.pyramid.for_each(f);
        self.gnn.for_each(f);
        self.classifier.for_each(f);
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(String, ParamKind, &mut Tensor)) {
        self.encoder.for_each_mut(f);
        self.pyramid.for_each_mut(f);
        self.gnn.for_each_mut(f);
        self.classifier.for_each_mut(f);
    }

    pub fn names_and_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.for_each(&mut |name, _, t| out.push((name, t.shape().to_vec())));
        out
    }

    pub fn tensor_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, _, _| n += 1);
        n
    }

    pub fn coordinate_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, _, t| n += t.numel());
        n
    }

    pub fn zero_grads(&mut self) {
        self.for_each_mut(&mut |_, _, t| t.zero_grad());
    }
}

/// Tape handles for one registration of the full parameter set.
#[derive(Debug, Clone)]
pub struct ModelIds {
    pub encoder: EncoderIds,
    pub pyramid: PyramidIds,
    pub gnn: Vec<ValueId>,
    pub classifier: ClassifierIds,
}

impl ModelIds {
    /// Rebuilds the id structure from a flat canonical-order id list, the
    /// inverse of [`ModelIds::ordered`]. Used by gradient-check harnesses
    /// that register leaves themselves.
    pub fn from_ordered(config: &ModelConfig, ids: &[ValueId]) -> ModelIds {
        let mut it = ids.iter().copied();
        let mut next = || it.next().expect("id list matches parameter count");
        let embedding = next();
        let positional = next();
        let layers = (0..config.encoder.layers)
            .map(|_| crate::encoder::LayerIds {
                w_q: next(),
                w_k: next(),
                w_v: next(),
                w_o: next(),
                ln1_gain: next(),
                ln1_bias: next(),
                ffn_w1: next(),
                ffn_b1: next(),
                ffn_w2: next(),
                ffn_b2: next(),
                ln2_gain: next(),
                ln2_bias: next(),
            })
            .collect();
        let level_proj = (0..config.encoder.layers).map(|_| next()).collect();
        let fuse_proj = next();
        let gnn = (0..config.gnn_dims.len()).map(|_| next()).collect();
        let classifier = ClassifierIds {
            weight: next(),
            bias: next(),
        };
        assert!(it.next().is_none(), "id list matches parameter count");
        ModelIds {
            encoder: EncoderIds {
                embedding,
                positional,
                layers,
            },
            pyramid: PyramidIds {
                level_proj,
                fuse_proj,
            },
            gnn,
            classifier,
        }
    }

    /// Leaf ids in the same canonical order as `ModelParams::for_each`.
    pub fn ordered(&self) -> Vec<ValueId> {
        let mut ids = vec![self.encoder.embedding, self.encoder.positional];
        for l in &self.encoder.layers {
            ids.extend([
                l.w_q, l.w_k, l.w_v, l.w_o, l.ln1_gain, l.ln1_bias, l.ffn_w1, l.ffn_b1,
                l.ffn_w2, l.ffn_b2, l.ln2_gain, l.ln2_bias,
            ]);
        }
        ids.extend(&self.pyramid.level_proj);
        ids.push(self.pyramid.fuse_proj);
        ids.extend(&self.gnn);
        ids.push(self.classifier.weight);
        ids.push(self.classifier.bias);
        ids
    }
}

pub fn register(tape: &mut Tape, params: &ModelParams) -> ModelIds {
    ModelIds {
        encoder: encoder::register(tape, &params.encoder),
        pyramid: pyramid::register(tape, &params.pyramid),
        gnn: gnn::register(tape, &params.gnn),
        classifier: head::register(tape, &params.classifier),
    }
}

/// Everything a single forward pass produced, for training, evaluation,
/// and the debug dump commands.
pub struct ForwardPass {
    pub states: LayerStates,
    pub levels: Vec<PyramidLevel>,
    pub fused: FusedFeatures,
    pub graph: TextGraph,
    pub node_states: ValueId,
    pub doc_vector: ValueId,
    pub logits: ValueId,
    pub prediction: Prediction,
    /// Present iff a label was supplied.
    pub loss: Option<ValueId>,
}

/// Runs the pipeline on one token sequence. `cache` shares window
/// topologies across examples of equal length; kNN augmentation (when
/// configured) always rebuilds from this example's features.
pub fn forward(
    tape: &mut Tape,
    config: &ModelConfig,
    ids: &ModelIds,
    tokens: &[u32],
    label: Option<usize>,
    cache: Option<&TopologyCache>,
) -> Result<ForwardPass, ModelError> {
    let embedded = encoder::embed(tape, &ids.encoder, tokens)?;
    let states = encoder::encode(tape, &config.encoder, &ids.encoder, embedded)?;
    let levels = pyramid::top_down_fuse(tape, &states, &ids.pyramid, Activation::Relu)?;
    let fused = pyramid::fuse_all(tape, &levels, &ids.pyramid, Activation::Relu)?;

    let features = tape.to_tensor(fused.features);
    let graph = build_graph(config, features, cache)?;

    let node_states = gnn::propagate_stack(tape, &graph, fused.features, &ids.gnn, Activation::Relu)?;
    let doc_vector = head::readout(tape, node_states)?;
    let logits = head::classify_logits(tape, doc_vector, &ids.classifier)?;
    let prediction = Prediction::from_probs(head::probs_from_logits(tape.value(logits)));
    let loss = match label {
        Some(l) => Some(head::cross_entropy(tape, logits, l)?),
        None => None,
    };

    Ok(ForwardPass {
        states,
        levels,
        fused,
        graph,
        node_states,
        doc_vector,
        logits,
        prediction,
        loss,
    })
}

fn build_graph(
    config: &ModelConfig,
    features: Tensor,
    cache: Option<&TopologyCache>,
) -> Result<TextGraph, ModelError> {
    let base = match cache {
        Some(c) => TextGraph {
            topology: c.get(features.rows()),
            node_features: features,
        },
        None => graph::build_window_graph(&features, config.graph_window)?,
    };
    match config.knn {
        Some(k) if base.node_count() >= 2 => Ok(graph::add_knn_edges(&base, k)?),
        _ => Ok(base),
    }
}
