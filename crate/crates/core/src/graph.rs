//! Text graph over semantic units (token positions carrying fused features).
//!
//! Default topology is a sliding co-occurrence window: positions i and j are
//! connected iff 0 < |i - j| < w. Edges are undirected, stored once with
//! u < v. Self-loops are never materialized because the propagation rule
//! carries an explicit self term. Each stored edge carries its symmetric
//! normalizer sqrt(deg(u) * deg(v)); an edge implies both degrees are >= 1
//! so the normalizer is always positive.

use crate::tensor::Tensor;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("window must be >= 2, got {0}")]
    WindowTooSmall(usize),
    #[error("k must be >= 1 for knn edges")]
    KnnZero,
    #[error("knn needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("node features must be rank 2, got shape {0:?}")]
    BadFeatureRank(Vec<usize>),
}

/// First invariant violation found by [`TextGraph::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum GraphViolation {
    SelfLoop { node: usize },
    EdgeOutOfRange { u: usize, v: usize, nodes: usize },
    UnorderedPair { u: usize, v: usize },
    UnsortedOrDuplicate { u: usize, v: usize },
    DegreeMismatch { node: usize, stored: usize, actual: usize },
    NormalizerMismatch { u: usize, v: usize, stored: f64, expected: f64 },
    FeatureRowMismatch { rows: usize, nodes: usize },
    NormalizerCount { stored: usize, edges: usize },
}

impl fmt::Display for GraphViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphViolation::SelfLoop { node } => write!(f, "self loop at node {node}"),
            GraphViolation::EdgeOutOfRange { u, v, nodes } => {
                write!(f, "edge ({u}, {v}) references nodes outside 0..{nodes}")
            }
            GraphViolation::UnorderedPair { u, v } => {
                write!(f, "edge ({u}, {v}) must be stored with u < v")
            }
            GraphViolation::UnsortedOrDuplicate { u, v } => {
                write!(f, "edge ({u}, {v}) is out of order or duplicated")
            }
            GraphViolation::DegreeMismatch { node, stored, actual } => {
                write!(f, "node {node} stores degree {stored}, edges imply {actual}")
            }
            GraphViolation::NormalizerMismatch { u, v, stored, expected } => {
                write!(f, "edge ({u}, {v}) stores normalizer {stored}, expected {expected}")
            }
            GraphViolation::FeatureRowMismatch { rows, nodes } => {
                write!(f, "feature matrix has {rows} rows for {nodes} nodes")
            }
            GraphViolation::NormalizerCount { stored, edges } => {
                write!(f, "{stored} normalizers stored for {edges} edges")
            }
        }
    }
}

/// Edge structure shared by all graphs of the same (n, w): sorted undirected
/// pairs, per-node degrees, and per-edge normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub nodes: usize,
    /// Sorted lexicographically, each pair with u < v, no duplicates.
    pub edges: Vec<(usize, usize)>,
    /// Neighbor count per node, self-loops excluded.
    pub degrees: Vec<usize>,
    /// sqrt(deg(u) * deg(v)) per stored edge, aligned with `edges`.
    pub normalizers: Vec<f64>,
}

impl Topology {
    /// Builds degrees and normalizers from a deduplicated sorted edge list.
    pub fn from_edges(nodes: usize, edges: Vec<(usize, usize)>) -> Topology {
        let mut degrees = vec![0usize; nodes];
        for &(u, v) in &edges {
            degrees[u] += 1;
            degrees[v] += 1;
        }
        let normalizers = edges
            .iter()
            .map(|&(u, v)| ((degrees[u] * degrees[v]) as f64).sqrt())
            .collect();
        Topology {
            nodes,
            edges,
            degrees,
            normalizers,
        }
    }

    /// Sliding-window topology: edge (i, j) iff 0 < |i - j| < w.
    pub fn window(nodes: usize, window: usize) -> Result<Topology, GraphError> {
        if window < 2 {
            return Err(GraphError::WindowTooSmall(window));
        }
        let mut edges = Vec::new();
        for u in 0..nodes {
            for v in (u + 1)..nodes.min(u + window) {
                edges.push((u, v));
            }
        }
        Ok(Topology::from_edges(nodes, edges))
    }

    /// Adjacency as (neighbor, 1/normalizer) lists, neighbors ascending.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes];
        for (&(u, v), &c) in self.edges.iter().zip(&self.normalizers) {
            adj[u].push((v, 1.0 / c));
            adj[v].push((u, 1.0 / c));
        }
        for list in adj.iter_mut() {
            list.sort_by_key(|&(n, _)| n);
        }
        adj
    }

    /// Dense |V| x |V| matrix with 1/c_vu at neighbor entries, zero else.
    pub fn normalized_adjacency(&self) -> Tensor {
        let n = self.nodes;
        let mut data = vec![0.0; n * n];
        for (&(u, v), &c) in self.edges.iter().zip(&self.normalizers) {
            data[u * n + v] = 1.0 / c;
            data[v * n + u] = 1.0 / c;
        }
        Tensor::from_vec(vec![n, n], data).expect("square adjacency")
    }
}

/// Nodes (feature rows) plus shared topology.
#[derive(Debug, Clone)]
pub struct TextGraph {
    pub node_features: Tensor,
    pub topology: Arc<Topology>,
}

impl TextGraph {
    pub fn node_count(&self) -> usize {
        self.topology.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.topology.edges
    }

    pub fn degrees(&self) -> &[usize] {
        &self.topology.degrees
    }

    pub fn normalizers(&self) -> &[f64] {
        &self.topology.normalizers
    }

    /// Checks every structural invariant, reporting the first violation.
    pub fn validate(&self) -> Result<(), GraphViolation> {
        let t = &self.topology;
        if self.node_features.rows() != t.nodes {
            return Err(GraphViolation::FeatureRowMismatch {
                rows: self.node_features.rows(),
                nodes: t.nodes,
            });
        }
        if t.normalizers.len() != t.edges.len() {
            return Err(GraphViolation::NormalizerCount {
                stored: t.normalizers.len(),
                edges: t.edges.len(),
            });
        }
        let mut prev: Option<(usize, usize)> = None;
        let mut actual_degrees = vec![0usize; t.nodes];
        for &(u, v) in &t.edges {
            if u == v {
                return Err(GraphViolation::SelfLoop { node: u });
            }
            if u > v {
                return Err(GraphViolation::UnorderedPair { u, v });
            }
            if v >= t.nodes {
                return Err(GraphViolation::EdgeOutOfRange { u, v, nodes: t.nodes });
            }
            if let Some(p) = prev {
                if (u, v) <= p {
                    return Err(GraphViolation::UnsortedOrDuplicate { u, v });
                }
            }
            prev = Some((u, v));
            actual_degrees[u] += 1;
            actual_degrees[v] += 1;
        }
        for (node, (&stored, &actual)) in t.degrees.iter().zip(&actual_degrees).enumerate() {
            if stored != actual {
                return Err(GraphViolation::DegreeMismatch { node, stored, actual });
            }
        }
        for (&(u, v), &stored) in t.edges.iter().zip(&t.normalizers) {
            let expected = ((t.degrees[u] * t.degrees[v]) as f64).sqrt();
            if (stored - expected).abs() > 1e-12 {
                return Err(GraphViolation::NormalizerMismatch { u, v, stored, expected });
            }
        }
        Ok(())
    }

    /// Edge-list dump: header `n d_p`, then one `u v c_vu` line per edge.
    pub fn write_edge_list<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.node_count(), self.node_features.cols())?;
        for (&(u, v), c) in self.edges().iter().zip(self.normalizers()) {
            writeln!(w, "{u} {v} {c}")?;
        }
        Ok(())
    }
}

/// Builds the sliding-window graph over per-position fused features.
pub fn build_window_graph(features: &Tensor, window: usize) -> Result<TextGraph, GraphError> {
    if features.rank() != 2 {
        return Err(GraphError::BadFeatureRank(features.shape().to_vec()));
    }
    let topology = Topology::window(features.rows(), window)?;
    Ok(TextGraph {
        node_features: features.clone(),
        topology: Arc::new(topology),
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Unions in, for every node, edges to its k most cosine-similar
/// non-neighbors. Ties break toward the lower node index; degrees and
/// normalizers are recomputed over the merged edge set.
pub fn add_knn_edges(graph: &TextGraph, k: usize) -> Result<TextGraph, GraphError> {
    if k == 0 {
        return Err(GraphError::KnnZero);
    }
    let n = graph.node_count();
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    let existing: BTreeSet<(usize, usize)> = graph.edges().iter().copied().collect();
    let mut merged = existing.clone();
    for v in 0..n {
        let mut candidates: Vec<(usize, f64)> = (0..n)
            .filter(|&u| u != v)
            .filter(|&u| !existing.contains(&(u.min(v), u.max(v))))
            .map(|u| (u, cosine(graph.node_features.row(v), graph.node_features.row(u))))
            .collect();
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for &(u, _) in candidates.iter().take(k) {
            merged.insert((u.min(v), u.max(v)));
        }
    }
    let topology = Topology::from_edges(n, merged.into_iter().collect());
    Ok(TextGraph {
        node_features: graph.node_features.clone(),
        topology: Arc::new(topology),
    })
}

/// Cache of window topologies keyed by node count; they depend only on
/// (n, w) so every example of the same length shares one allocation.
pub struct TopologyCache {
    window: usize,
    cache: Mutex<HashMap<usize, Arc<Topology>>>,
}

impl TopologyCache {
    pub fn new(window: usize) -> TopologyCache {
        TopologyCache {
            window,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn get(&self, nodes: usize) -> Arc<Topology> {
        let mut cache = self.cache.lock().expect("topology cache poisoned");
        cache
            .entry(nodes)
            .or_insert_with(|| {
                Arc::new(Topology::window(nodes, self.window).expect("window >= 2"))
            })
            .clone()
    }
}
