use super::Assignment;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Scalar};

/// Largest `n` accepted by [`brute_force_assignment`] (10! = 3.6M permutations).
pub const BRUTE_FORCE_LIMIT: usize = 10;

/// Exhaustive maximum over all `n!` permutations.
///
/// Permutations are visited in lexicographic order and only a strictly better
/// total replaces the incumbent, so ties resolve to the lexicographically
/// smallest permutation. Partial sums accumulate in row order, matching
/// [`Assignment::total`].
pub fn brute_force_assignment<T: Scalar>(s: &Matrix<T>) -> Result<Assignment> {
    let n = s.rows();
    if s.cols() != n {
        return Err(Error::shape("brute_force_assignment", "square matrix", format!("{n}x{}", s.cols())));
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { n, limit: BRUTE_FORCE_LIMIT });
    }
    if !s.is_finite() {
        return Err(Error::NonFinite { context: "similarity matrix".into() });
    }
    let dense: Vec<f64> = s.as_slice().iter().map(|&x| x.into()).collect();

    struct Search<'a> {
        n: usize,
        s: &'a [f64],
        used: Vec<bool>,
        current: Vec<usize>,
        best: Vec<usize>,
        best_total: f64,
    }

    impl Search<'_> {
        fn go(&mut self, row: usize, acc: f64) {
            if row == self.n {
                if self.best.is_empty() || acc > self.best_total {
                    self.best_total = acc;
                    self.best.clone_from(&self.current);
                }
                return;
            }
            for j in 0..self.n {
                if !self.used[j] {
                    self.used[j] = true;
                    self.current.push(j);
                    self.go(row + 1, acc + self.s[row * self.n + j]);
                    self.current.pop();
                    self.used[j] = false;
                }
            }
        }
    }

    let mut search = Search {
        n,
        s: &dense,
        used: vec![false; n],
        current: Vec::with_capacity(n),
        best: Vec::new(),
        best_total: f64::NEG_INFINITY,
    };
    search.go(0, 0.0);
    Ok(Assignment::from_perm(s, search.best, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_examples() {
        let one = Matrix::from_rows(&[vec![0.3]]).unwrap();
        let a = brute_force_assignment(&one).unwrap();
        assert_eq!(a.perm, vec![0]);
        assert_eq!(a.total, 0.3);

        let id = Matrix::<f64>::identity(2);
        let a = brute_force_assignment(&id).unwrap();
        assert_eq!((a.perm, a.total), (vec![0, 1], 2.0));

        let anti = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let a = brute_force_assignment(&anti).unwrap();
        assert_eq!((a.perm, a.total), (vec![1, 0], 2.0));
    }

    #[test]
    fn ties_pick_lexicographically_smallest() {
        let flat = Matrix::from_vec(3, 3, vec![0.5; 9]).unwrap();
        assert_eq!(brute_force_assignment(&flat).unwrap().perm, vec![0, 1, 2]);
    }

    #[test]
    fn guards() {
        assert!(matches!(brute_force_assignment(&Matrix::<f64>::zeros(11, 11)), Err(Error::TooLarge { n: 11, .. })));
        assert!(matches!(brute_force_assignment(&Matrix::<f64>::zeros(2, 3)), Err(Error::Shape { .. })));
        let empty = brute_force_assignment(&Matrix::<f64>::zeros(0, 0)).unwrap();
        assert!(empty.is_empty());
    }
}
