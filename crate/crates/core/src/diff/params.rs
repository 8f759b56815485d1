use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diff::{Gradients, Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Ordered collection of named trainable arrays.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    entries: Vec<(String, Matrix)>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix) {
        self.entries.push((name.into(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_coords(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = &Matrix> {
        self.entries.iter().map(|(_, m)| m)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.entries.iter_mut().map(|(_, m)| m)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter array `{name}`")))
    }

    pub fn entry(&self, i: usize) -> (&str, &Matrix) {
        let (n, m) = &self.entries[i];
        (n, m)
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.entries[i].1
    }

    /// Registers every array as a trainable leaf, in order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|(_, m)| tape.param(m.clone())).collect()
    }

    /// Collects gradients for the vars returned by [`ParameterSet::bind`].
    pub fn gradients(&self, grads: &mut Gradients, vars: &[Var]) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .zip(vars)
                .map(|((n, _), &v)| (n.clone(), grads.take(v)))
                .collect(),
        }
    }

    /// All-zero arrays with the same names and shapes.
    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(n, m)| (n.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect(),
        }
    }

    /// `self += other` entry by entry; names and shapes must match.
    pub fn accumulate(&mut self, other: &ParameterSet) -> Result<()> {
        self.check_compatible(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.add_assign(b);
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for (_, m) in &mut self.entries {
            m.scale_in_place(c);
        }
    }

    pub fn check_compatible(&self, other: &ParameterSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::ShapeMismatch {
                op: "parameter_set",
                left: (self.entries.len(), 0),
                right: (other.entries.len(), 0),
            });
        }
        for ((na, a), (nb, b)) in self.entries.iter().zip(&other.entries) {
            if na != nb || a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: "parameter_set",
                    left: a.shape(),
                    right: b.shape(),
                });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, m)| m.is_finite())
    }

    /// Nested-list form for JSON export.
    pub fn to_nested(&self) -> BTreeMap<String, Vec<Vec<f64>>> {
        self.entries.iter().map(|(n, m)| (n.clone(), m.to_rows())).collect()
    }
}

impl FromIterator<(String, Matrix)> for ParameterSet {
    fn from_iter<I: IntoIterator<Item = (String, Matrix)>>(iter: I) -> Self {
        ParameterSet {
            entries: iter.into_iter().collect(),
        }
    }
}
