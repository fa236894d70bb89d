use crate::linalg::{Matrix, Scalar};

/// Row-wise nearest neighbour. Several rows may share a column.
#[derive(Clone, Debug, PartialEq)]
pub struct ArgmaxMatch {
    pub cols: Vec<usize>,
    pub sims: Vec<f64>,
}

impl ArgmaxMatch {
    /// Mean of the row maxima (mean max cosine when `S` is a cosine matrix).
    pub fn mean(&self) -> f64 {
        if self.sims.is_empty() {
            0.0
        } else {
            self.sims.iter().sum::<f64>() / self.sims.len() as f64
        }
    }
}

/// Maps each row `i` to `argmax_j S[i, j]`, lowest `j` on ties.
pub fn argmax_matching<T: Scalar>(s: &Matrix<T>) -> ArgmaxMatch {
    let mut cols = Vec::with_capacity(s.rows());
    let mut sims = Vec::with_capacity(s.rows());
    for row in s.row_iter() {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (j, &x) in row.iter().enumerate() {
            let x: f64 = x.into();
            if x > best_val {
                best = j;
                best_val = x;
            }
        }
        cols.push(best);
        sims.push(best_val);
    }
    ArgmaxMatch { cols, sims }
}
