//! Dense/sparse matrices and a small reverse-mode differentiation tape.

mod gradcheck;
mod matrix;
mod params;
mod sparse;
mod tape;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport, EPS_RANGE};
pub use matrix::Matrix;
pub use params::ParameterSet;
pub use sparse::CsrMatrix;
pub use tape::{sigmoid, FaultInjection, Gradients, Tape, Var, PROB_FLOOR};
