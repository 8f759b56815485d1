use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDataset};

const MAX_RESHUFFLES: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    /// (train, val, test)
    pub fractions: (f64, f64, f64),
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            seed,
            fractions: (0.8, 0.1, 0.1),
        }
    }

    /// Part sizes: val and test are rounded to nearest, train takes the rest.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        let (tr, va, te) = self.fractions;
        if [tr, va, te].iter().any(|f| !(*f > 0.0)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
            return Err(Error::EmptySplit(format!(
                "fractions ({tr}, {va}, {te}) must be positive and sum to 1"
            )));
        }
        let n_val = (va * n as f64).round() as usize;
        let n_test = (te * n as f64).round() as usize;
        let n_train = n.saturating_sub(n_val + n_test);
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::EmptySplit(format!(
                "{n} graphs give parts ({n_train}, {n_val}, {n_test})"
            )));
        }
        Ok((n_train, n_val, n_test))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic shuffled partition. If the training part misses a class,
/// the shuffle is redrawn with seed+1, seed+2, ... (at most 100 times).
pub fn split_indices(ds: &GraphDataset, spec: &SplitSpec) -> Result<SplitIndices> {
    let n = ds.len();
    let (n_train, n_val, _) = spec.sizes(n)?;
    let present: BTreeSet<usize> = ds.graphs.iter().map(Graph::label).collect();

    for attempt in 0..=MAX_RESHUFFLES {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(attempt));
        order.shuffle(&mut rng);
        let train = order[..n_train].to_vec();
        let seen: BTreeSet<usize> = train.iter().map(|&i| ds.graphs[i].label()).collect();
        if seen == present {
            return Ok(SplitIndices {
                train,
                val: order[n_train..n_train + n_val].to_vec(),
                test: order[n_train + n_val..].to_vec(),
            });
        }
    }
    Err(Error::EmptySplit(format!(
        "no shuffle within {MAX_RESHUFFLES} retries puts every class in the training part"
    )))
}

pub fn split_dataset(ds: &GraphDataset, spec: &SplitSpec) -> Result<(GraphDataset, GraphDataset, GraphDataset)> {
    let idx = split_indices(ds, spec)?;
    Ok((ds.subset(&idx.train)?, ds.subset(&idx.val)?, ds.subset(&idx.test)?))
}

/// Index batches for one epoch; the shuffle depends on `(seed, epoch)` only.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub fn iterate_batches(ds: &GraphDataset, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<&Graph>> {
    batch_indices(ds.len(), batch_size, seed, epoch)
        .into_iter()
        .map(|b| b.into_iter().map(|i| &ds.graphs[i]).collect())
        .collect()
}
