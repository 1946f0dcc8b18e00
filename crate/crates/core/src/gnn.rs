//! Graph-convolution stack over a [`TextGraph`].
//!
//! One propagation step updates every node as
//!
//!   h_v' = sigma( sum_{u in N(v)} (1 / c_vu) * W h_u  +  W h_v )
//!
//! with the same projection applied to neighbors and self, and
//! c_vu = sqrt(deg(v) * deg(u)). The tape implementation factors this as
//! `sigma(A_norm (H W) + H W)` with the normalized adjacency held constant;
//! `oracle_propagate` evaluates the same rule with literal loops and dense
//! storage, sharing no code with the fast path, so the two can check each
//! other on small graphs.

use crate::encoder::ParamKind;
use crate::graph::TextGraph;
use crate::tensor::{Activation, Tape, Tensor, TensorError, ValueId};
use thiserror::Error;

/// Node-count guard for the oracle, which is O(|V|^2 d).
pub const ORACLE_MAX_NODES: usize = 64;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("oracle is test-scale only: {nodes} nodes exceeds {ORACLE_MAX_NODES}")]
    TestScaleExceeded { nodes: usize },
}

/// Per-layer projection weights; layer k maps d_k -> d_{k+1}.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub layers: Vec<Tensor>,
}

impl GnnParams {
    /// Zero-filled stack: input_dim -> dims[0] -> dims[1] -> ...
    pub fn zeros(input_dim: usize, dims: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(dims.len());
        let mut d_in = input_dim;
        for &d_out in dims {
            layers.push(Tensor::zeros(vec![d_in, d_out]));
            d_in = d_out;
        }
        GnnParams { layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |w| w.cols())
    }

    pub fn for_each(&self, f: &mut impl FnMut(String, ParamKind, &Tensor)) {
        for (i, w) in self.layers.iter().enumerate() {
            f(format!("gnn.layer{i}.weight"), ParamKind::Weight, w);
        }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(String, ParamKind, &mut Tensor)) {
        for (i, w) in self.layers.iter_mut().enumerate() {
            f(format!("gnn.layer{i}.weight"), ParamKind::Weight, w);
        }
    }
}

pub fn register(tape: &mut Tape, params: &GnnParams) -> Vec<ValueId> {
    params.layers.iter().map(|w| tape.leaf(w)).collect()
}

/// One propagation step on the tape.
pub fn propagate(
    tape: &mut Tape,
    graph: &TextGraph,
    h: ValueId,
    weight: ValueId,
    sigma: Activation,
) -> Result<ValueId, TensorError> {
    let projected = tape.matmul(h, weight)?;
    let adjacency = graph.topology.normalized_adjacency();
    let adj = tape.leaf(&adjacency);
    let neighbor_sum = tape.matmul(adj, projected)?;
    let combined = tape.add(neighbor_sum, projected)?;
    Ok(tape.activation(sigma, combined))
}

/// K sequential propagation steps.
pub fn propagate_stack(
    tape: &mut Tape,
    graph: &TextGraph,
    h0: ValueId,
    weights: &[ValueId],
    sigma: Activation,
) -> Result<ValueId, TensorError> {
    let mut h = h0;
    for &w in weights {
        h = propagate(tape, graph, h, w, sigma)?;
    }
    Ok(h)
}

/// Literal evaluation of the propagation rule: double loop over (v, u)
/// pairs with a naive dense matrix-vector product. Independent of the tape
/// path by construction.
pub fn oracle_propagate(
    graph: &TextGraph,
    h: &Tensor,
    weight: &Tensor,
    sigma: Activation,
) -> Result<Tensor, GnnError> {
    let n = graph.node_count();
    if n > ORACLE_MAX_NODES {
        return Err(GnnError::TestScaleExceeded { nodes: n });
    }
    let d_in = h.cols();
    let d_out = weight.cols();
    if weight.rows() != d_in || h.rows() != n {
        return Err(TensorError::DimensionMismatch {
            op: "oracle_propagate",
            lhs: h.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        }
        .into());
    }

    // dense symmetric neighbor table with 1/c entries
    let mut inv_norm = vec![vec![0.0f64; n]; n];
    for (&(u, v), &c) in graph.edges().iter().zip(graph.normalizers()) {
        inv_norm[u][v] = 1.0 / c;
        inv_norm[v][u] = 1.0 / c;
    }

    let apply_weight = |row: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d_out];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &x) in row.iter().enumerate() {
                acc += x * weight.at(i, j);
            }
            *o = acc;
        }
        out
    };

    let mut out = vec![0.0; n * d_out];
    for v in 0..n {
        let mut acc = apply_weight(h.row(v)); // self term
        for u in 0..n {
            if inv_norm[v][u] != 0.0 {
                let wu = apply_weight(h.row(u));
                for (a, x) in acc.iter_mut().zip(&wu) {
                    *a += inv_norm[v][u] * x;
                }
            }
        }
        for (j, &a) in acc.iter().enumerate() {
            out[v * d_out + j] = match sigma {
                Activation::Relu => a.max(0.0),
                Activation::Identity => a,
            };
        }
    }
    Ok(Tensor::from_vec(vec![n, d_out], out)?)
}
