//! Small seeded two-class datasets for tests, smoke runs and CLI demos.
//!
//! Every graph is a random tree over 8–16 nodes with three node-label types.
//! Class-1 graphs close triangles and favour label 2; class-0 graphs add
//! long chords and favour label 0. Classes alternate by graph index.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::Matrix;
use crate::graph::{FeatureLayout, Graph, GraphDataset};

const LABEL_WEIGHTS: [[f64; 3]; 2] = [[0.6, 0.3, 0.1], [0.25, 0.3, 0.45]];

fn draw_label<R: Rng>(rng: &mut R, class: usize) -> usize {
    let u: f64 = rng.gen();
    let w = LABEL_WEIGHTS[class];
    if u < w[0] {
        0
    } else if u < w[0] + w[1] {
        1
    } else {
        2
    }
}

pub fn toy_graph<R: Rng>(rng: &mut R, class: usize) -> Graph {
    let n = rng.gen_range(8..=16);
    let mut parent = vec![0usize; n];
    let mut edges = Vec::new();
    for i in 1..n {
        parent[i] = rng.gen_range(0..i);
        edges.push((parent[i], i));
    }
    let extra = rng.gen_range(1..=3);
    for _ in 0..extra {
        let i = rng.gen_range(2..n);
        if class == 1 {
            // child–grandparent chord closes a triangle
            let gp = parent[parent[i]];
            if gp != i {
                edges.push((gp, i));
            }
        } else {
            let j = rng.gen_range(0..n);
            edges.push((i, j));
        }
    }
    let mut x = Matrix::zeros(n, 3);
    for v in 0..n {
        x[(v, draw_label(rng, class))] = 1.0;
    }
    Graph::new(n, edges, x, class).expect("generated graph is valid")
}

pub fn toy_dataset(num_graphs: usize, seed: u64) -> GraphDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..num_graphs).map(|g| toy_graph(&mut rng, g % 2)).collect();
    let classes = if num_graphs > 1 { 2 } else { 1 };
    GraphDataset::new(
        "TOY",
        graphs,
        classes,
        FeatureLayout {
            node_label_values: vec![0, 1, 2],
            num_attributes: 0,
            class_values: (0..classes as i64).collect(),
        },
    )
    .expect("non-empty dataset")
}

/// Erdős–Rényi graph on `n` nodes with edge probability `p`, features
/// uniform in `[-1, 1]`.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, p: f64, d_in: usize, label: usize) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let x = Matrix::random_uniform(n, d_in, -1.0, 1.0, rng);
    Graph::new(n, edges, x, label).expect("generated graph is valid")
}

/// Uniformly random permutation of `0..n`.
pub fn random_permutation<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}
