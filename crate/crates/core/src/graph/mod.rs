//! Graphs, TU-format datasets, normalized adjacencies, splits and batching.

mod split;
pub mod synthetic;
mod tu;

use std::sync::Arc;

use serde::Serialize;

use crate::diff::{CsrMatrix, Matrix};
use crate::error::{Error, Result};

pub use split::{batch_indices, iterate_batches, split_dataset, split_indices, SplitIndices, SplitSpec};
pub use tu::{parse_tu_dataset, write_tu_dataset};

/// Undirected edge with `0 ≤ i < j`.
pub type Edge = (usize, usize);

/// Sorts endpoints, drops self-loops and duplicates.
pub fn canonical_edges(edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Edge> {
    let mut out: Vec<Edge> = edges
        .into_iter()
        .filter(|(a, b)| a != b)
        .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}`, with `d̃` the degree counting the self-loop.
pub fn build_normalized_adjacency(num_nodes: usize, edges: &[Edge]) -> CsrMatrix {
    let mut degree = vec![1.0f64; num_nodes];
    for &(i, j) in edges {
        degree[i] += 1.0;
        degree[j] += 1.0;
    }
    let mut triplets = Vec::with_capacity(num_nodes + 2 * edges.len());
    for (i, &d) in degree.iter().enumerate() {
        triplets.push((i, i, 1.0 / d));
    }
    for &(i, j) in edges {
        let w = 1.0 / (degree[i] * degree[j]).sqrt();
        triplets.push((i, j, w));
        triplets.push((j, i, w));
    }
    CsrMatrix::from_triplets(num_nodes, num_nodes, &triplets).expect("edge endpoints checked by caller")
}

#[derive(Clone, Debug)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<Edge>,
    features: Matrix,
    label: usize,
    adj_norm: Arc<CsrMatrix>,
}

impl Graph {
    /// Edges are canonicalized; self-loops and duplicates are dropped.
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>, features: Matrix, label: usize) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidArgument("graph with zero nodes".into()));
        }
        if features.rows() != num_nodes {
            return Err(Error::ShapeMismatch {
                op: "graph_features",
                left: features.shape(),
                right: (num_nodes, features.cols()),
            });
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("graph features".into()));
        }
        let edges = canonical_edges(edges);
        if let Some(&(_, j)) = edges.iter().find(|&&(_, j)| j >= num_nodes) {
            return Err(Error::InvalidArgument(format!(
                "edge endpoint {j} out of range for {num_nodes} nodes"
            )));
        }
        let adj_norm = Arc::new(build_normalized_adjacency(num_nodes, &edges));
        Ok(Graph {
            num_nodes,
            edges,
            features,
            label,
            adj_norm,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn adj_norm(&self) -> &Arc<CsrMatrix> {
        &self.adj_norm
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let edges: Vec<_> = self.edges.iter().map(|&(i, j)| (perm[i], perm[j])).collect();
        Graph::new(self.num_nodes, edges, self.features.permute_rows(perm), self.label)
    }
}

/// How the feature columns were assembled, kept so datasets can be re-emitted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureLayout {
    /// Raw node-label values, in one-hot column order.
    pub node_label_values: Vec<i64>,
    pub num_attributes: usize,
    /// Raw graph-label values, indexed by class.
    pub class_values: Vec<i64>,
}

#[derive(Clone, Debug)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub layout: FeatureLayout,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub graphs: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
}

impl GraphDataset {
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, num_classes: usize, layout: FeatureLayout) -> Result<Self> {
        let name = name.into();
        let first = graphs
            .first()
            .ok_or_else(|| Error::EmptySplit(format!("dataset `{name}` has no graphs")))?;
        let feature_dim = first.features().cols();
        for g in &graphs {
            if g.features().cols() != feature_dim {
                return Err(Error::ShapeMismatch {
                    op: "dataset_features",
                    left: (0, feature_dim),
                    right: g.features().shape(),
                });
            }
            if g.label() >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: g.label(),
                    classes: num_classes,
                });
            }
        }
        Ok(GraphDataset {
            name,
            graphs,
            num_classes,
            feature_dim,
            layout,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// New dataset holding the graphs at `indices`, same metadata.
    pub fn subset(&self, indices: &[usize]) -> Result<GraphDataset> {
        let graphs = indices.iter().map(|&i| self.graphs[i].clone()).collect();
        GraphDataset::new(self.name.clone(), graphs, self.num_classes, self.layout.clone())
    }

    pub fn summary(&self) -> DatasetSummary {
        let n = self.graphs.len() as f64;
        DatasetSummary {
            name: self.name.clone(),
            graphs: self.graphs.len(),
            classes: self.num_classes,
            feature_dim: self.feature_dim,
            avg_nodes: self.graphs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / n,
            avg_edges: self.graphs.iter().map(|g| g.edges().len() as f64).sum::<f64>() / n,
        }
    }
}
