//! Attributed graph data model.
//!
//! [`Graph`] owns everything read from disk or generated, including the
//! evaluation-only sensitive column. Training code never receives a `Graph`;
//! it receives a [`TrainingGraph`], a projection that has no accessor for the
//! sensitive column:
//!
//! ```compile_fail
//! # use fairwos::graph::Graph;
//! fn peek(g: &Graph) {
//!     let view = g.training_view();
//!     let _ = view.sensitive_eval();
//! }
//! ```

mod io;
mod sparse;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use io::{load_graph_csv, save_graph_csv};
pub use sparse::{NormalizedAdjacency, SparseMatrix};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: DenseMatrix,
    labels: Vec<Option<u8>>,
    split: Vec<Split>,
    sensitive_eval: Option<Vec<Option<u8>>>,
}

impl Graph {
    /// Validates and canonicalizes a graph. Edges are treated as undirected:
    /// `(a, b)` and `(b, a)` collapse to one edge stored as `(min, max)`.
    pub fn new(
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: DenseMatrix,
        labels: Vec<Option<u8>>,
        split: Vec<Split>,
        sensitive_eval: Option<Vec<Option<u8>>>,
    ) -> Result<Self> {
        if features.rows() != num_nodes || labels.len() != num_nodes || split.len() != num_nodes {
            return Err(Error::Validation(format!(
                "per-node columns disagree: {num_nodes} nodes, {} feature rows, {} labels, {} splits",
                features.rows(),
                labels.len(),
                split.len()
            )));
        }
        if let Some(s) = &sensitive_eval {
            if s.len() != num_nodes {
                return Err(Error::Validation(format!(
                    "sensitive column has {} entries for {num_nodes} nodes",
                    s.len()
                )));
            }
            if s.iter().flatten().any(|&v| v > 1) {
                return Err(Error::Validation("sensitive values must be 0 or 1".into()));
            }
        }
        if labels.iter().flatten().any(|&y| y > 1) {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        features.ensure_finite("node features")?;

        let mut canonical = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) references a node outside 0..{num_nodes}"
                )));
            }
            if a == b {
                return Err(Error::Validation(format!("self-loop on node {a}")));
            }
            canonical.push((a.min(b), a.max(b)));
        }
        canonical.sort_unstable();
        canonical.dedup();

        Ok(Self {
            num_nodes,
            edges: canonical,
            features,
            labels,
            split,
            sensitive_eval,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical undirected edges `(min, max)`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.labels
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    /// Evaluation-only. Training code works on [`TrainingGraph`], which does not expose this.
    pub fn sensitive_eval(&self) -> Option<&[Option<u8>]> {
        self.sensitive_eval.as_deref()
    }

    pub fn average_degree(&self) -> f64 {
        if self.num_nodes == 0 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.num_nodes as f64
        }
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        nodes_in(&self.split, split)
    }

    /// Nodes tagged `train` that carry a label (the labeled set).
    pub fn labeled_nodes(&self) -> Vec<usize> {
        labeled_in(&self.split, &self.labels, Split::Train)
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.num_nodes];
        for &(a, b) in &self.edges {
            nb[a].push(b);
            nb[b].push(a);
        }
        for list in &mut nb {
            list.sort_unstable();
        }
        nb
    }

    pub fn normalize_adjacency(&self) -> NormalizedAdjacency {
        NormalizedAdjacency::from_neighbors(&self.neighbors())
    }

    /// Unweighted adjacency without self-loops.
    pub fn raw_adjacency(&self) -> SparseMatrix {
        SparseMatrix::from_rows(
            self.neighbors()
                .into_iter()
                .map(|nb| nb.into_iter().map(|j| (j, 1.0)).collect())
                .collect(),
        )
    }

    pub fn training_view(&self) -> TrainingGraph<'_> {
        TrainingGraph::new(self)
    }
}

pub(crate) fn nodes_in(splits: &[Split], which: Split) -> Vec<usize> {
    splits
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s == which)
        .map(|(i, _)| i)
        .collect()
}

pub(crate) fn labeled_in(splits: &[Split], labels: &[Option<u8>], which: Split) -> Vec<usize> {
    splits
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|&(_, (&s, y))| s == which && y.is_some())
        .map(|(i, _)| i)
        .collect()
}

/// Z-scores each column with statistics from the `rows` subset. Columns with
/// zero spread are only centered.
pub fn standardize_columns(x: &DenseMatrix, rows: &[usize]) -> DenseMatrix {
    let mut out = x.clone();
    if rows.is_empty() {
        return out;
    }
    let n = rows.len() as f64;
    for c in 0..x.cols() {
        let mean = rows.iter().map(|&r| x.get(r, c)).sum::<f64>() / n;
        let var = rows
            .iter()
            .map(|&r| (x.get(r, c) - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        for r in 0..x.rows() {
            out.set(r, c, (x.get(r, c) - mean) / std);
        }
    }
    out
}

/// The view of a [`Graph`] that training code is allowed to see: structure,
/// training-standardized features, labels and split, and no sensitive column.
#[derive(Debug, Clone)]
pub struct TrainingGraph<'a> {
    graph: &'a Graph,
    features: DenseMatrix,
    normalized: NormalizedAdjacency,
    raw: SparseMatrix,
}

impl<'a> TrainingGraph<'a> {
    fn new(graph: &'a Graph) -> Self {
        let train = graph.nodes_in(Split::Train);
        Self {
            features: standardize_columns(&graph.features, &train),
            normalized: graph.normalize_adjacency(),
            raw: graph.raw_adjacency(),
            graph,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.graph.edges
    }

    /// Features z-scored with training-split statistics.
    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[Option<u8>] {
        &self.graph.labels
    }

    pub fn split(&self) -> &[Split] {
        &self.graph.split
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        self.graph.nodes_in(split)
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        self.graph.labeled_nodes()
    }

    pub fn labeled_in(&self, split: Split) -> Vec<usize> {
        labeled_in(&self.graph.split, &self.graph.labels, split)
    }

    /// Labels with missing entries replaced by 0; only meaningful on labeled nodes.
    pub fn dense_labels(&self) -> Vec<u8> {
        self.graph.labels.iter().map(|y| y.unwrap_or(0)).collect()
    }

    pub fn normalized_adjacency(&self) -> &NormalizedAdjacency {
        &self.normalized
    }

    pub fn raw_adjacency(&self) -> &SparseMatrix {
        &self.raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(edges: Vec<(usize, usize)>, n: usize) -> Result<Graph> {
        Graph::new(
            n,
            edges,
            DenseMatrix::zeros(n, 1),
            vec![Some(0); n],
            vec![Split::Train; n],
            None,
        )
    }

    #[test]
    fn two_node_normalization() {
        let g = tiny(vec![(0, 1)], 2).unwrap();
        let dense = g.normalize_adjacency().to_dense();
        for &v in dense.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_node_has_unit_self_loop() {
        let g = tiny(vec![(0, 1)], 3).unwrap();
        let adj = g.normalize_adjacency();
        assert_eq!(adj.get(2, 2), 1.0);
        assert_eq!(adj.get(2, 0), 0.0);
        assert_eq!(adj.get(0, 2), 0.0);
    }

    #[test]
    fn empty_graph_normalizes_to_empty() {
        let g = tiny(vec![], 0).unwrap();
        let adj = g.normalize_adjacency();
        assert_eq!(adj.dim(), 0);
        assert_eq!(adj.nnz(), 0);
    }

    #[test]
    fn edges_are_symmetrized_and_deduplicated() {
        let g = tiny(vec![(0, 1), (1, 0), (2, 1)], 3).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn out_of_range_and_self_loop_rejected() {
        assert!(matches!(tiny(vec![(0, 5)], 3), Err(Error::Validation(_))));
        assert!(matches!(tiny(vec![(1, 1)], 3), Err(Error::Validation(_))));
    }

    #[test]
    fn standardization_uses_only_given_rows() {
        let x = DenseMatrix::from_rows(&[vec![1.0], vec![3.0], vec![100.0]]).unwrap();
        let z = standardize_columns(&x, &[0, 1]);
        assert_eq!(z.get(0, 0), -1.0);
        assert_eq!(z.get(1, 0), 1.0);
        assert_eq!(z.get(2, 0), 98.0);
    }
}
