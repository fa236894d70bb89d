use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use super::{is_bijection, Assignment};
use crate::error::{Error, Result};
use crate::linalg::{topk_select, Matrix, Scalar};

const NONE: usize = usize::MAX;

/// Per-row candidate lists `(column, similarity)` over an `n x n` problem.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCandidates {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseCandidates {
    /// Validates and deduplicates candidate lists (first occurrence of a
    /// column wins). Every row needs at least one candidate.
    pub fn new(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != n {
            return Err(Error::shape("SparseCandidates", format!("{n} rows"), rows.len()));
        }
        let mut clean = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidArgument(format!("row {i} has no candidates")));
            }
            let mut seen = std::collections::HashSet::with_capacity(row.len());
            let mut kept = Vec::with_capacity(row.len());
            for (j, s) in row {
                if j >= n {
                    return Err(Error::InvalidArgument(format!("row {i}: column {j} out of range")));
                }
                if !s.is_finite() {
                    return Err(Error::NonFinite { context: format!("candidate ({i}, {j})") });
                }
                if seen.insert(j) {
                    kept.push((j, s));
                }
            }
            clean.push(kept);
        }
        Ok(Self { n, rows: clean })
    }

    /// Keeps the `c` most similar columns of every row of a dense matrix.
    pub fn top_c<T: Scalar>(s: &Matrix<T>, c: usize) -> Result<Self> {
        if s.rows() != s.cols() {
            return Err(Error::shape("SparseCandidates::top_c", "square matrix", format!("{:?}", s.shape())));
        }
        let rows = s
            .row_iter()
            .map(|row| {
                let vals: Vec<f64> = row.iter().map(|&x| x.into()).collect();
                topk_select(&vals, c.max(1)).into_iter().map(|j| (j, vals[j])).collect()
            })
            .collect();
        Self::new(s.rows(), rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Maximum-weight perfect matching restricted to the candidate support.
///
/// Pairs outside the support are never used; if the support admits no
/// perfect matching the row that could not be placed is reported. The
/// result is flagged `approximate` because the true dense optimum may use a
/// pair outside the support. Successive shortest paths (one Dijkstra per row,
/// heap ordered by distance then column index) with dual potentials.
pub fn solve_assignment_sparse(cand: &SparseCandidates) -> Result<Assignment> {
    let n = cand.n;
    let max = cand.rows.iter().flatten().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
    let cost = |s: f64| max - s;

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col_of = vec![NONE; n];
    let mut row_of = vec![NONE; n];

    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![NONE; n];
    let mut done = vec![false; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut finalized: Vec<usize> = Vec::new();
    let mut rows_seen: Vec<(usize, f64)> = Vec::new();
    let mut heap = BinaryHeap::new();

    for r in 0..n {
        rows_seen.clear();
        finalized.clear();
        heap.clear();

        let relax = |i: usize,
                     base: f64,
                     dist: &mut [f64],
                     pred: &mut [usize],
                     done: &[bool],
                     touched: &mut Vec<usize>,
                     heap: &mut BinaryHeap<Reverse<(Dist, usize)>>| {
            for &(j, s) in &cand.rows[i] {
                if done[j] {
                    continue;
                }
                let nd = base + (cost(s) - u[i] - v[j]);
                if nd < dist[j] {
                    if dist[j] == f64::INFINITY {
                        touched.push(j);
                    }
                    dist[j] = nd;
                    pred[j] = i;
                    heap.push(Reverse((Dist(nd), j)));
                }
            }
        };

        rows_seen.push((r, 0.0));
        relax(r, 0.0, &mut dist, &mut pred, &done, &mut touched, &mut heap);

        let (sink, total) = loop {
            let Some(Reverse((Dist(d), j))) = heap.pop() else {
                return Err(Error::Infeasible { row: r });
            };
            if done[j] || d > dist[j] {
                continue;
            }
            done[j] = true;
            finalized.push(j);
            let i = row_of[j];
            if i == NONE {
                break (j, d);
            }
            rows_seen.push((i, d));
            relax(i, d, &mut dist, &mut pred, &done, &mut touched, &mut heap);
        };

        for &(i, di) in &rows_seen {
            u[i] += total - di;
        }
        for &j in &finalized {
            if dist[j] < total {
                v[j] -= total - dist[j];
            }
        }

        let mut j = sink;
        loop {
            let i = pred[j];
            let prev = col_of[i];
            row_of[j] = i;
            col_of[i] = j;
            if i == r {
                break;
            }
            j = prev;
        }

        for &j in &touched {
            dist[j] = f64::INFINITY;
            pred[j] = NONE;
            done[j] = false;
        }
        touched.clear();
    }

    debug_assert!(is_bijection(&col_of));
    let per_pair: Vec<f64> = col_of
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            cand.rows[i].iter().find(|&&(c, _)| c == j).map(|&(_, s)| s).expect("matched pair lies in the support")
        })
        .collect();
    Ok(Assignment { total: per_pair.iter().sum(), perm: col_of, per_pair, approximate: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lap::solve_assignment_max;
    use crate::linalg::{cosine_matrix, RngState};

    #[test]
    fn full_support_matches_dense() {
        let mut rng = RngState::new(21);
        for n in [1, 2, 9, 40] {
            let s = cosine_matrix(&rng.gaussian_matrix(n, 6), &rng.gaussian_matrix(n, 6)).unwrap();
            let dense = solve_assignment_max(&s).unwrap();
            let sparse = solve_assignment_sparse(&SparseCandidates::top_c(&s, n).unwrap()).unwrap();
            assert!(sparse.approximate);
            assert_eq!(sparse.perm, dense.perm);
            assert!((sparse.total - dense.total).abs() < 1e-9);
        }
    }

    #[test]
    fn diagonal_support_gives_identity() {
        let s = Matrix::<f64>::identity(6);
        let cand = SparseCandidates::top_c(&s, 1).unwrap();
        let a = solve_assignment_sparse(&cand).unwrap();
        assert_eq!(a.perm, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn random_32_with_8_candidates() {
        let mut rng = RngState::new(22);
        let mut hits = 0;
        for _ in 0..20 {
            let s = cosine_matrix(&rng.gaussian_matrix(32, 8), &rng.gaussian_matrix(32, 8)).unwrap();
            let dense = solve_assignment_max(&s).unwrap();
            let cand = SparseCandidates::top_c(&s, 8).unwrap();
            let inside = dense.perm.iter().enumerate().all(|(i, &j)| cand.row(i).iter().any(|&(c, _)| c == j));
            match solve_assignment_sparse(&cand) {
                Ok(sparse) => {
                    assert!(sparse.total <= dense.total + 1e-9);
                    if inside {
                        hits += 1;
                        assert!((sparse.total - dense.total).abs() < 1e-9);
                    }
                }
                Err(Error::Infeasible { .. }) => assert!(!inside),
                Err(e) => panic!("{e}"),
            }
        }
        assert!(hits > 0);
    }

    #[test]
    fn infeasible_pattern_is_reported() {
        let cand = SparseCandidates::new(3, vec![vec![(0, 1.0)], vec![(0, 0.5)], vec![(2, 0.2)]]).unwrap();
        assert!(matches!(solve_assignment_sparse(&cand), Err(Error::Infeasible { row: 1 })));
    }

    #[test]
    fn candidate_validation() {
        assert!(SparseCandidates::new(2, vec![vec![(0, 1.0)], vec![]]).is_err());
        assert!(SparseCandidates::new(2, vec![vec![(0, 1.0)], vec![(5, 1.0)]]).is_err());
        let dup = SparseCandidates::new(1, vec![vec![(0, 1.0), (0, 0.2)]]).unwrap();
        assert_eq!(dup.row(0), &[(0, 1.0)]);
    }
}
