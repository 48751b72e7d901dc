//! Discrete-time dynamic graphs: snapshots over a fixed node set with
//! per-step features, node labels and split masks.

mod io;
mod synthetic;
mod transition;

pub use io::{load_dynamic_graph, save_dynamic_graph, Manifest, FORMAT_VERSION};
pub use synthetic::{generate_synthetic, SyntheticParams};
pub use transition::{normalize_dense, normalize_transition, TransitionMatrix};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::gradflow::Tensor;
use crate::scalar::Scalar;

/// Integer written to label files for nodes without a label.
pub const UNLABELED: i64 = -1;

/// Split membership of a node. A node belongs to at most one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn token(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "none" => Some(Split::None),
            _ => None,
        }
    }
}

/// Undirected, unweighted snapshot stored as a sorted list of `(u, v)` pairs
/// with `u < v`. Binary, symmetric and loop-free by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Adjacency {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl Adjacency {
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            edges: Vec::new(),
        }
    }

    /// Builds a snapshot from undirected pairs in any orientation. Self-loops
    /// and out-of-range endpoints are rejected; repeated pairs collapse.
    pub fn from_edges(num_nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at node {a}")));
            }
            let (u, v) = if a < b { (a, b) } else { (b, a) };
            if v >= num_nodes {
                return Err(Error::IndexOutOfRange {
                    index: v,
                    len: num_nodes,
                });
            }
            set.insert((u, v));
        }
        Ok(Self {
            num_nodes,
            edges: set.into_iter().collect(),
        })
    }

    /// Reads a dense `n × n` 0/1 matrix; it must be symmetric with a zero diagonal.
    pub fn from_dense<F: Scalar>(dense: &Tensor<F>) -> Result<Self> {
        let (n, c) = dense.dims2()?;
        if n != c {
            return Err(Error::shape("adjacency", dense.shape(), &[n, n]));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = dense.at2(i, j);
                if v != F::zero() && v != F::one() {
                    return Err(Error::InvalidGraph(format!("entry ({i},{j}) = {v} is not binary")));
                }
                if v != dense.at2(j, i) {
                    return Err(Error::InvalidGraph(format!("asymmetric entry ({i},{j})")));
                }
                if i == j && v != F::zero() {
                    return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
                }
                if i < j && v == F::one() {
                    edges.push((i, j));
                }
            }
        }
        Ok(Self { num_nodes: n, edges })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges.binary_search(&key).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn to_dense<F: Scalar>(&self) -> Tensor<F> {
        let n = self.num_nodes;
        let mut t = Tensor::zeros(&[n, n]);
        for &(u, v) in &self.edges {
            t.data_mut()[u * n + v] = F::one();
            t.data_mut()[v * n + u] = F::one();
        }
        t
    }

    /// Subgraph induced by `nodes`, relabelled to `0..nodes.len()` in the given order.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.num_nodes];
        for (new, &old) in nodes.iter().enumerate() {
            pos[old] = new;
        }
        let mut edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter_map(|&(u, v)| {
                let (a, b) = (pos[u], pos[v]);
                (a != usize::MAX && b != usize::MAX).then_some(if a < b { (a, b) } else { (b, a) })
            })
            .collect();
        edges.sort_unstable();
        Self {
            num_nodes: nodes.len(),
            edges,
        }
    }
}

/// A `T`-step dynamic graph over `n` nodes with `d`-dimensional features.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph<F> {
    num_classes: usize,
    snapshots: Vec<Adjacency>,
    /// `[T, n, d]`
    features: Tensor<F>,
    labels: Vec<Option<usize>>,
    splits: Vec<Split>,
}

impl<F: Scalar> DynamicGraph<F> {
    pub fn new(
        num_classes: usize,
        snapshots: Vec<Adjacency>,
        features: Tensor<F>,
        labels: Vec<Option<usize>>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let g = Self {
            num_classes,
            snapshots,
            features,
            labels,
            splits,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidGraph("num_classes must be positive".into()));
        }
        let [t, n, d] = self.features.shape()[..] else {
            return Err(Error::InvalidGraph(format!(
                "features must be [T, n, d], got {:?}",
                self.features.shape()
            )));
        };
        if t != self.snapshots.len() {
            return Err(Error::InvalidGraph(format!(
                "{} snapshots but features hold {t} steps",
                self.snapshots.len()
            )));
        }
        if d == 0 {
            return Err(Error::InvalidGraph("feature_dim must be positive".into()));
        }
        if let Some(s) = self.snapshots.iter().position(|a| a.num_nodes() != n) {
            return Err(Error::InvalidGraph(format!("snapshot {s} has a different node count")));
        }
        if self.labels.len() != n || self.splits.len() != n {
            return Err(Error::InvalidGraph(format!(
                "labels ({}) and masks ({}) must have one entry per node ({n})",
                self.labels.len(),
                self.splits.len()
            )));
        }
        for (v, (label, split)) in self.labels.iter().zip(&self.splits).enumerate() {
            if let Some(c) = label {
                if *c >= self.num_classes {
                    return Err(Error::InvalidGraph(format!(
                        "node {v}: label {c} out of range for {} classes",
                        self.num_classes
                    )));
                }
            } else if *split != Split::None {
                return Err(Error::InvalidGraph(format!(
                    "node {v} is in the {} mask but unlabeled",
                    split.token()
                )));
            }
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        self.snapshots.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[2]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn snapshots(&self) -> &[Adjacency] {
        &self.snapshots
    }

    pub fn features(&self) -> &Tensor<F> {
        &self.features
    }

    /// `n × d` features at step `t`.
    pub fn features_at(&self, t: usize) -> Tensor<F> {
        self.features.outer(t).expect("step in range")
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Indices of nodes in `split`, ascending.
    pub fn mask(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (s == split).then_some(i))
            .collect()
    }

    pub fn transitions(&self) -> Vec<TransitionMatrix<F>> {
        self.snapshots.iter().map(normalize_transition).collect()
    }
}

/// Synthetic dynamic graph with `m` labelled nodes; every node trains.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedGraph<F> {
    num_classes: usize,
    /// `[T, m, d]`
    pub features: Tensor<F>,
    labels: Vec<usize>,
    pub adjacency: Vec<Adjacency>,
}

impl<F: Scalar> CondensedGraph<F> {
    pub fn new(
        num_classes: usize,
        features: Tensor<F>,
        labels: Vec<usize>,
        adjacency: Vec<Adjacency>,
    ) -> Result<Self> {
        let [t, m, _] = features.shape()[..] else {
            return Err(Error::InvalidGraph("condensed features must be [T, m, d]".into()));
        };
        if labels.len() != m || adjacency.len() != t || adjacency.iter().any(|a| a.num_nodes() != m) {
            return Err(Error::InvalidGraph("condensed graph dimensions disagree".into()));
        }
        if labels.iter().any(|&c| c >= num_classes) {
            return Err(Error::InvalidGraph("condensed label out of range".into()));
        }
        Ok(Self {
            num_classes,
            features,
            labels,
            adjacency,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_steps(&self) -> usize {
        self.adjacency.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[2]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// View as a dataset whose nodes are all in the training split.
    pub fn to_dynamic_graph(&self) -> DynamicGraph<F> {
        DynamicGraph::new(
            self.num_classes,
            self.adjacency.clone(),
            self.features.clone(),
            self.labels.iter().map(|&c| Some(c)).collect(),
            vec![Split::Train; self.labels.len()],
        )
        .expect("condensed graph is valid by construction")
    }
}

/// Fraction of labelled nodes in each class. Unlabelled nodes are ignored.
pub fn class_proportions<F: Scalar>(labels: &[Option<usize>], num_classes: usize) -> Result<Vec<F>> {
    let mut counts = vec![0usize; num_classes];
    let mut total = 0usize;
    for c in labels.iter().flatten() {
        if *c >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {c} out of range for {num_classes} classes"
            )));
        }
        counts[*c] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::NoLabeledNodes);
    }
    let total = F::from_count(total);
    Ok(counts.into_iter().map(|k| F::from_count(k) / total).collect())
}
