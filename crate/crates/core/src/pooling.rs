//! Maximization-step model: symmetric edge scoring, thresholded score
//! normalization, contraction of surviving edges into supernodes, and the
//! prediction-correction regularizer.
//!
//! Supernodes are the connected components of the subgraph formed by edges
//! whose score reaches `s_thre`. A supernode's feature is
//! `Σ_{i∈K} gate_i · Z_i`, where `gate_i` is the row sum of the normalized
//! scores of node `i` (floored at [`GATE_FLOOR`] for nodes without a
//! surviving edge). The gate is what carries gradient back to the scoring
//! parameters; which edges survive is treated as a constant.

use rand::Rng;
use serde::Serialize;

use crate::diff::{CsrMatrix, Matrix, ParameterSet, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{build_normalized_adjacency, canonical_edges, Edge, Graph};

/// Gate given to nodes with no surviving incident edge.
pub const GATE_FLOOR: f64 = 1e-6;

/// Cap on each coarse-edge squared distance in the (negated) spread term.
pub const SPREAD_CLAMP: f64 = 10.0;

/// Pooling stops once a graph has this many nodes or fewer.
pub const MIN_POOL_NODES: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct PoolLayerParams {
    /// `hidden × hidden`
    pub w: Matrix,
    /// `2·hidden × 1`
    pub a: Matrix,
}

#[derive(Clone, Copy, Debug)]
pub struct PoolLayerVars {
    pub w: Var,
    pub a: Var,
}

/// Independent scoring parameters for every pooling layer.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolingParams {
    pub layers: Vec<PoolLayerParams>,
}

impl PoolingParams {
    pub fn init<R: Rng>(hidden: usize, num_layers: usize, rng: &mut R) -> Self {
        PoolingParams {
            layers: (0..num_layers)
                .map(|_| PoolLayerParams {
                    w: Matrix::glorot(hidden, hidden, rng),
                    a: Matrix::glorot(2 * hidden, 1, rng),
                })
                .collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn to_set(&self) -> ParameterSet {
        let mut set = ParameterSet::new();
        for (l, layer) in self.layers.iter().enumerate() {
            set.push(format!("pool.{l}.w"), layer.w.clone());
            set.push(format!("pool.{l}.a"), layer.a.clone());
        }
        set
    }

    pub fn from_set(set: &ParameterSet, num_layers: usize) -> Result<Self> {
        let layers = (0..num_layers)
            .map(|l| {
                Ok(PoolLayerParams {
                    w: set.require(&format!("pool.{l}.w"))?.clone(),
                    a: set.require(&format!("pool.{l}.a"))?.clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(PoolingParams { layers })
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<PoolLayerVars> {
        self.layers
            .iter()
            .map(|l| PoolLayerVars {
                w: tape.param(l.w.clone()),
                a: tape.param(l.a.clone()),
            })
            .collect()
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<PoolLayerVars> {
        self.layers
            .iter()
            .map(|l| PoolLayerVars {
                w: tape.constant(l.w.clone()),
                a: tape.constant(l.a.clone()),
            })
            .collect()
    }

    /// `w, a` per layer, matching the order of [`bind`](Self::bind).
    pub fn arrays_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.a]).collect()
    }
}

/// `s_ij = ½(σ(a·[W Z_i ‖ W Z_j]) + σ(a·[W Z_j ‖ W Z_i]))` for each edge,
/// as an `m × 1` column. The term with the smaller endpoint first is always
/// added first, so the score does not depend on how an edge is oriented.
pub fn score_edges(tape: &mut Tape, z: Var, edges: &[Edge], w: Var, a: Var) -> Result<Var> {
    let (n, h) = tape.shape(z);
    if tape.shape(w) != (h, h) {
        return Err(Error::ShapeMismatch {
            op: "score_edges(w)",
            left: (n, h),
            right: tape.shape(w),
        });
    }
    if tape.shape(a) != (2 * h, 1) {
        return Err(Error::ShapeMismatch {
            op: "score_edges(a)",
            left: (2 * h, 1),
            right: tape.shape(a),
        });
    }
    let (lo, hi): (Vec<usize>, Vec<usize>) = edges
        .iter()
        .map(|&(i, j)| if i < j { (i, j) } else { (j, i) })
        .unzip();
    let projected = tape.matmul(z, w)?;
    let p_lo = tape.gather_rows(projected, &lo)?;
    let p_hi = tape.gather_rows(projected, &hi)?;
    let forward = tape.concat_cols(p_lo, p_hi)?;
    let reverse = tape.concat_cols(p_hi, p_lo)?;
    let l1 = tape.matmul(forward, a)?;
    let l2 = tape.matmul(reverse, a)?;
    let s1 = tape.sigmoid(l1)?;
    let s2 = tape.sigmoid(l2)?;
    let both = tape.add(s1, s2)?;
    tape.scale(both, 0.5)
}

/// Thresholded, count-normalized scores.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedScores {
    pub s_thre: f64,
    /// Per edge: `score ≥ s_thre`.
    pub surviving: Vec<bool>,
    /// Per node: number of surviving incident edges.
    pub counts: Vec<usize>,
    /// Every directed pair `(i, j)` of every edge with its value
    /// `s_ij·1[s_ij ≥ s_thre] / counts[i]` (zero when the edge is cut).
    pub s_norm: Vec<(usize, usize, f64)>,
}

impl NormalizedScores {
    /// `Σ_j S_norm_ij` per node.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.counts.len()];
        for &(i, _, v) in &self.s_norm {
            sums[i] += v;
        }
        sums
    }

    pub fn num_surviving(&self) -> usize {
        self.surviving.iter().filter(|&&s| s).count()
    }
}

pub fn normalize_scores(scores: &[f64], s_thre: f64, num_nodes: usize, edges: &[Edge]) -> NormalizedScores {
    debug_assert_eq!(scores.len(), edges.len());
    let surviving: Vec<bool> = scores.iter().map(|&s| s >= s_thre).collect();
    let mut counts = vec![0usize; num_nodes];
    for (&(i, j), _) in edges.iter().zip(&surviving).filter(|(_, &s)| s) {
        counts[i] += 1;
        counts[j] += 1;
    }
    let mut s_norm = Vec::with_capacity(2 * edges.len());
    for ((&(i, j), &s), &keep) in edges.iter().zip(scores).zip(&surviving) {
        let (vi, vj) = if keep {
            (s / counts[i] as f64, s / counts[j] as f64)
        } else {
            (0.0, 0.0)
        };
        s_norm.push((i, j, vi));
        s_norm.push((j, i, vj));
    }
    NormalizedScores {
        s_thre,
        surviving,
        counts,
        s_norm,
    }
}

/// Surjection from fine nodes onto `0..num_supernodes`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MergeMap {
    pub assignment: Vec<usize>,
    pub num_supernodes: usize,
}

impl MergeMap {
    pub fn identity(n: usize) -> Self {
        MergeMap {
            assignment: (0..n).collect(),
            num_supernodes: n,
        }
    }

    /// Connected components of the kept edges, numbered by smallest member.
    pub fn from_components(num_nodes: usize, edges: &[Edge], keep: &[bool]) -> Self {
        let mut parent: Vec<usize> = (0..num_nodes).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (&(i, j), _) in edges.iter().zip(keep).filter(|(_, &k)| k) {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
        let mut label = vec![usize::MAX; num_nodes];
        let mut assignment = Vec::with_capacity(num_nodes);
        let mut next = 0;
        for v in 0..num_nodes {
            let root = find(&mut parent, v);
            if label[root] == usize::MAX {
                label[root] = next;
                next += 1;
            }
            assignment.push(label[root]);
        }
        MergeMap {
            assignment,
            num_supernodes: next,
        }
    }

    /// `then ∘ self`: fine node → supernode of `then`.
    pub fn compose(&self, then: &MergeMap) -> MergeMap {
        MergeMap {
            assignment: self.assignment.iter().map(|&s| then.assignment[s]).collect(),
            num_supernodes: then.num_supernodes,
        }
    }

    pub fn is_surjective(&self) -> bool {
        let mut hit = vec![false; self.num_supernodes];
        for &s in &self.assignment {
            if s >= self.num_supernodes {
                return false;
            }
            hit[s] = true;
        }
        hit.into_iter().all(|h| h)
    }

    /// Image of `edges`, without self-loops and duplicates.
    pub fn coarse_edges(&self, edges: &[Edge]) -> Vec<Edge> {
        canonical_edges(edges.iter().map(|&(i, j)| (self.assignment[i], self.assignment[j])))
    }
}

#[derive(Clone, Debug)]
pub struct Contraction {
    pub z: Var,
    pub edges: Vec<Edge>,
    pub merge_map: MergeMap,
    pub adj_norm: CsrMatrix,
}

/// Merges every connected component of surviving edges into one supernode.
pub fn contract_graph(
    tape: &mut Tape,
    num_nodes: usize,
    edges: &[Edge],
    scores: Var,
    norm: &NormalizedScores,
    z: Var,
) -> Result<Contraction> {
    // gate_i = Σ_{surviving e ∋ i} s_e / counts[i], or GATE_FLOOR if none survive
    let mut edge_index = Vec::new();
    let mut node_index = Vec::new();
    let mut weights = Vec::new();
    for (e, (&(i, j), _)) in edges.iter().zip(&norm.surviving).enumerate().filter(|(_, (_, &s))| s) {
        for v in [i, j] {
            edge_index.push(e);
            node_index.push(v);
            weights.push(1.0 / norm.counts[v] as f64);
        }
    }
    let floor: Vec<f64> = norm
        .counts
        .iter()
        .map(|&c| if c == 0 { GATE_FLOOR } else { 0.0 })
        .collect();

    let picked = tape.gather_rows(scores, &edge_index)?;
    let w = tape.constant(Matrix::column(&weights));
    let weighted = tape.hadamard(picked, w)?;
    let gate = tape.scatter_add_rows(weighted, &node_index, num_nodes)?;
    let floor = tape.constant(Matrix::column(&floor));
    let gate = tape.add(gate, floor)?;

    let merge_map = MergeMap::from_components(num_nodes, edges, &norm.surviving);
    let gated = tape.scale_rows(z, gate)?;
    let coarse_z = tape.scatter_add_rows(gated, &merge_map.assignment, merge_map.num_supernodes)?;
    let coarse_edges = merge_map.coarse_edges(edges);
    let adj_norm = build_normalized_adjacency(merge_map.num_supernodes, &coarse_edges);
    Ok(Contraction {
        z: coarse_z,
        edges: coarse_edges,
        merge_map,
        adj_norm,
    })
}

#[derive(Clone, Debug)]
pub struct LayerTrace {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub scores: Vec<f64>,
    pub normalized: NormalizedScores,
    pub contraction: Contraction,
}

#[derive(Clone, Debug)]
pub struct PoolingTrace {
    pub layers: Vec<LayerTrace>,
    /// Fine node → final supernode.
    pub composed_map: MergeMap,
    /// Final-layer features.
    pub z_cor: Var,
    /// Edges among final supernodes.
    pub coarse_edges: Vec<Edge>,
}

impl PoolingTrace {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn num_supernodes(&self) -> usize {
        self.composed_map.num_supernodes
    }

    pub fn summary(&self) -> TraceSummary {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut histogram = [0usize; 10];
                for &s in &l.scores {
                    histogram[((s * 10.0) as usize).min(9)] += 1;
                }
                LayerSummary {
                    nodes: l.num_nodes,
                    edges: l.num_edges,
                    surviving_edges: l.normalized.num_surviving(),
                    supernodes: l.contraction.merge_map.num_supernodes,
                    coarse_edges: l.contraction.edges.len(),
                    score_histogram: histogram,
                }
            })
            .collect();
        TraceSummary {
            depth: self.depth(),
            final_supernodes: self.num_supernodes(),
            final_edges: self.coarse_edges.len(),
            composed_map: self.composed_map.assignment.clone(),
            layers,
        }
    }
}

/// Serializable per-layer statistics of a [`PoolingTrace`].
#[derive(Clone, Debug, Serialize)]
pub struct TraceSummary {
    pub depth: usize,
    pub final_supernodes: usize,
    pub final_edges: usize,
    pub composed_map: Vec<usize>,
    pub layers: Vec<LayerSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerSummary {
    pub nodes: usize,
    pub edges: usize,
    pub surviving_edges: usize,
    pub supernodes: usize,
    pub coarse_edges: usize,
    /// Edge-score counts over ten equal bins of `[0, 1]`.
    pub score_histogram: [usize; 10],
}

/// Applies score → normalize → contract once per entry of `layers`, stopping
/// early when at most [`MIN_POOL_NODES`] remain or no edge survives.
pub fn hierarchical_pool(tape: &mut Tape, graph: &Graph, z_input: Var, layers: &[PoolLayerVars], s_thre: f64) -> Result<PoolingTrace> {
    let mut num_nodes = graph.num_nodes();
    let mut edges = graph.edges().to_vec();
    let mut z = z_input;
    let mut composed = MergeMap::identity(num_nodes);
    let mut trace = Vec::new();

    for layer in layers {
        if num_nodes <= MIN_POOL_NODES || edges.is_empty() {
            break;
        }
        let scores = score_edges(tape, z, &edges, layer.w, layer.a)?;
        let values = tape.value(scores).as_slice().to_vec();
        let normalized = normalize_scores(&values, s_thre, num_nodes, &edges);
        if normalized.num_surviving() == 0 {
            break;
        }
        let contraction = contract_graph(tape, num_nodes, &edges, scores, &normalized, z)?;
        composed = composed.compose(&contraction.merge_map);
        trace.push(LayerTrace {
            num_nodes,
            num_edges: edges.len(),
            scores: values,
            normalized,
            contraction: contraction.clone(),
        });
        num_nodes = contraction.merge_map.num_supernodes;
        edges = contraction.edges;
        z = contraction.z;
    }

    Ok(PoolingTrace {
        layers: trace,
        composed_map: composed,
        z_cor: z,
        coarse_edges: edges,
    })
}

/// `Σ_i ‖Z_cor[g(i)] − Z_pre[i]‖² − Σ_{(u,v)} min(‖Z_cor[u] − Z_cor[v]‖², SPREAD_CLAMP)`
/// with the second sum over each coarse edge once.
pub fn prediction_correction_loss(
    tape: &mut Tape,
    z_cor: Var,
    z_pre: Var,
    composed_map: &MergeMap,
    coarse_edges: &[Edge],
) -> Result<Var> {
    let (k, w_cor) = tape.shape(z_cor);
    let (n, w_pre) = tape.shape(z_pre);
    if w_cor != w_pre || composed_map.assignment.len() != n || composed_map.num_supernodes != k {
        return Err(Error::ShapeMismatch {
            op: "prediction_correction_loss",
            left: (k, w_cor),
            right: (n, w_pre),
        });
    }
    let pulled = tape.gather_rows(z_cor, &composed_map.assignment)?;
    let diff = tape.sub(pulled, z_pre)?;
    let sq = tape.sum_sq_rows(diff)?;
    let align = tape.sum(sq)?;
    if coarse_edges.is_empty() {
        return Ok(align);
    }
    let (u, v): (Vec<usize>, Vec<usize>) = coarse_edges.iter().copied().unzip();
    let zu = tape.gather_rows(z_cor, &u)?;
    let zv = tape.gather_rows(z_cor, &v)?;
    let d = tape.sub(zu, zv)?;
    let sq = tape.sum_sq_rows(d)?;
    let capped = tape.clamp_max(sq, SPREAD_CLAMP)?;
    let spread = tape.sum(capped)?;
    tape.sub(align, spread)
}

/// `L_exp + γ · L_precor`
pub fn total_loss(tape: &mut Tape, l_exp: Var, l_precor: Var, gamma: f64) -> Result<Var> {
    let reg = tape.scale(l_precor, gamma)?;
    tape.add(l_exp, reg)
}
