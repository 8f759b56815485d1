//! LGRPool: hierarchical graph pooling whose pooled node representations are
//! regularized toward personalized-PageRank propagated ones, trained by
//! alternating between the propagation model and the pooling model.

pub mod diff;
mod error;
pub mod graph;
pub mod model;
pub mod pooling;
pub mod propagation;
pub mod selfcheck;
pub mod training;

pub use error::{Error, Result};
