//! Maximum-weight bijective assignment between two equal-size latent sets.
//!
//! [`solve_assignment_max`] is an exact dense solver in the Jonker-Volgenant
//! family (column reduction, augmenting row reduction, then shortest
//! augmenting paths with dual potentials). [`brute_force_assignment`] is the
//! exhaustive oracle used to check it, [`argmax_matching`] is the
//! non-bijective nearest-neighbour baseline, and [`solve_assignment_sparse`]
//! solves over per-row candidate lists for sizes where a dense matrix does
//! not fit.

mod argmax;
mod brute;
mod dense;
mod sparse;

pub use argmax::{argmax_matching, ArgmaxMatch};
pub use brute::{brute_force_assignment, BRUTE_FORCE_LIMIT};
pub use dense::solve_assignment_max;
pub use sparse::{solve_assignment_sparse, SparseCandidates};

use crate::linalg::{Matrix, Scalar};

/// A bijection `perm` from the rows of a similarity matrix to its columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `perm[i]` is the column matched to row `i`.
    pub perm: Vec<usize>,
    /// `sum(per_pair)`, accumulated in row order.
    pub total: f64,
    /// `S[i, perm[i]]` for every row.
    pub per_pair: Vec<f64>,
    /// Set when the solve only considered a sparsified support.
    pub approximate: bool,
}

impl Assignment {
    pub(crate) fn from_perm<T: Scalar>(s: &Matrix<T>, perm: Vec<usize>, approximate: bool) -> Self {
        let per_pair: Vec<f64> = perm.iter().enumerate().map(|(i, &j)| s[(i, j)].into()).collect();
        let total = per_pair.iter().sum();
        Self { perm, total, per_pair, approximate }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Mean matched similarity.
    pub fn mean(&self) -> f64 {
        if self.perm.is_empty() {
            0.0
        } else {
            self.total / self.perm.len() as f64
        }
    }

    /// The inverse map, column to row.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.perm.len()];
        for (i, &j) in self.perm.iter().enumerate() {
            inv[j] = i;
        }
        inv
    }
}

/// Sum of `S[i, perm[i]]` in row order.
pub fn permutation_total<T: Scalar>(s: &Matrix<T>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| s[(i, j)].into()).sum()
}

pub(crate) fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter().all(|&j| j < seen.len() && !std::mem::replace(&mut seen[j], true))
}
