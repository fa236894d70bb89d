use super::{is_bijection, Assignment};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Scalar};

const NONE: usize = usize::MAX;

/// Exact maximum-weight perfect matching on a square similarity matrix.
///
/// Internally minimizes `max(S) - S[i, j]`, which is nonnegative, with the
/// Jonker-Volgenant procedure. The cost is derived from `S` on the fly, so
/// the working set is `S` itself plus `O(n)` vectors; an `f32` input halves
/// the footprint at large `n`. Columns are scanned in ascending index order
/// and the solve is sequential, so repeated calls return identical
/// permutations.
pub fn solve_assignment_max<T: Scalar>(s: &Matrix<T>) -> Result<Assignment> {
    let n = s.rows();
    if s.cols() != n {
        return Err(Error::shape("solve_assignment_max", "square matrix", format!("{n}x{}", s.cols())));
    }
    if !s.is_finite() {
        return Err(Error::NonFinite { context: "similarity matrix".into() });
    }
    match n {
        0 => return Ok(Assignment::from_perm(s, Vec::new(), false)),
        1 => return Ok(Assignment::from_perm(s, vec![0], false)),
        _ => {}
    }

    let max = s.as_slice().iter().map(|&x| x.into()).fold(f64::NEG_INFINITY, f64::max);
    let mut jv = Jv::new(s.as_slice(), n, max);
    let mut free = jv.column_reduction();
    for _ in 0..2 {
        if free.is_empty() {
            break;
        }
        free = jv.augmenting_row_reduction(free);
    }
    jv.augment(&free);

    debug_assert!(is_bijection(&jv.x));
    Ok(Assignment::from_perm(s, jv.x, false))
}

#[derive(Clone, Copy)]
struct Costs<'a, T> {
    s: &'a [T],
    n: usize,
    max: f64,
}

impl<'a, T: Scalar> Costs<'a, T> {
    #[inline(always)]
    fn row(self, i: usize) -> impl Fn(usize) -> f64 + 'a {
        let row = &self.s[i * self.n..(i + 1) * self.n];
        let max = self.max;
        move |j| max - row[j].into()
    }
}

struct Jv<'a, T> {
    costs: Costs<'a, T>,
    n: usize,
    /// row -> column
    x: Vec<usize>,
    /// column -> row
    y: Vec<usize>,
    /// column duals
    v: Vec<f64>,
}

impl<'a, T: Scalar> Jv<'a, T> {
    fn new(s: &'a [T], n: usize, max: f64) -> Self {
        Self { costs: Costs { s, n, max }, n, x: vec![NONE; n], y: vec![NONE; n], v: vec![f64::INFINITY; n] }
    }

    /// Column reduction followed by reduction transfer. Returns free rows.
    fn column_reduction(&mut self) -> Vec<usize> {
        let n = self.n;
        let mut argmin = vec![0usize; n];
        for i in 0..n {
            let row = &self.costs.s[i * n..(i + 1) * n];
            for (j, &sij) in row.iter().enumerate() {
                let c = self.costs.max - sij.into();
                if c < self.v[j] {
                    self.v[j] = c;
                    argmin[j] = i;
                }
            }
        }

        let mut unique = vec![true; n];
        for j in (0..n).rev() {
            let i = argmin[j];
            if self.x[i] == NONE {
                self.x[i] = j;
                self.y[j] = i;
            } else {
                unique[i] = false;
            }
        }

        let mut free = Vec::new();
        for i in 0..n {
            if self.x[i] == NONE {
                free.push(i);
            } else if unique[i] {
                let j = self.x[i];
                let cost = self.costs.row(i);
                let mut min = f64::INFINITY;
                for j2 in (0..n).filter(|&j2| j2 != j) {
                    min = min.min(cost(j2) - self.v[j2]);
                }
                self.v[j] -= min;
            }
        }
        free
    }

    /// One sweep of augmenting row reduction over `free`; returns the rows
    /// still free afterwards.
    fn augmenting_row_reduction(&mut self, mut free: Vec<usize>) -> Vec<usize> {
        let n = self.n;
        let n_free = free.len();
        let mut current = 0;
        let mut new_free = 0;
        // Bounds the number of visits so float ties cannot cycle forever.
        let mut visits = 0usize;

        while current < n_free {
            visits += 1;
            let free_i = free[current];
            current += 1;

            let cost = self.costs.row(free_i);
            let mut j1 = 0;
            let mut u1 = cost(0) - self.v[0];
            let mut j2 = NONE;
            let mut u2 = f64::INFINITY;
            for j in 1..n {
                let h = cost(j) - self.v[j];
                if h < u2 {
                    if h >= u1 {
                        u2 = h;
                        j2 = j;
                    } else {
                        u2 = u1;
                        u1 = h;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }

            let mut i0 = self.y[j1];
            let v1_new = self.v[j1] - (u2 - u1);
            let lowers = v1_new < self.v[j1];
            if visits < current * n {
                if lowers {
                    self.v[j1] = v1_new;
                } else if i0 != NONE && j2 != NONE {
                    j1 = j2;
                    i0 = self.y[j2];
                }
                if i0 != NONE {
                    if lowers {
                        current -= 1;
                        free[current] = i0;
                    } else {
                        free[new_free] = i0;
                        new_free += 1;
                    }
                }
            } else if i0 != NONE {
                free[new_free] = i0;
                new_free += 1;
            }
            self.x[free_i] = j1;
            self.y[j1] = free_i;
        }
        free.truncate(new_free);
        free
    }

    /// Shortest augmenting path from every remaining free row.
    fn augment(&mut self, free: &[usize]) {
        let n = self.n;
        let mut ws = PathWorkspace { cols: (0..n).collect(), d: vec![0.0; n], pred: vec![0; n] };
        for &f in free {
            let mut j = self.find_path(f, &mut ws);
            loop {
                let i = ws.pred[j];
                self.y[j] = i;
                std::mem::swap(&mut j, &mut self.x[i]);
                if i == f {
                    break;
                }
            }
        }
    }

    /// Dijkstra over reduced costs from `start`; returns the free column that
    /// ends the path and updates the duals of the scanned columns.
    fn find_path(&mut self, start: usize, ws: &mut PathWorkspace) -> usize {
        let n = self.n;
        for (k, c) in ws.cols.iter_mut().enumerate() {
            *c = k;
        }
        {
            let cost = self.costs.row(start);
            for j in 0..n {
                ws.d[j] = cost(j) - self.v[j];
                ws.pred[j] = start;
            }
        }

        let (mut lo, mut hi, mut n_ready) = (0usize, 0usize, 0usize);
        let mut final_j = NONE;
        while final_j == NONE {
            if lo == hi {
                n_ready = lo;
                hi = find_min_columns(lo, &ws.d, &mut ws.cols);
                final_j = ws.cols[lo..hi].iter().copied().find(|&j| self.y[j] == NONE).unwrap_or(NONE);
            }
            if final_j == NONE {
                final_j = self.scan(&mut lo, &mut hi, ws);
            }
        }

        let mind = ws.d[ws.cols[lo]];
        for &j in &ws.cols[..n_ready] {
            self.v[j] += ws.d[j] - mind;
        }
        final_j
    }

    /// Scans the current minimum-distance columns, relaxing the rows they are
    /// assigned to. Returns a free column reached at the minimum distance, if
    /// any.
    #[allow(clippy::mut_range_bound)]
    fn scan(&self, plo: &mut usize, phi: &mut usize, ws: &mut PathWorkspace) -> usize {
        let n = self.n;
        let (mut lo, mut hi) = (*plo, *phi);
        while lo != hi {
            let j = ws.cols[lo];
            lo += 1;
            let i = self.y[j];
            let mind = ws.d[j];
            let cost = self.costs.row(i);
            let h = cost(j) - self.v[j] - mind;
            for k in hi..n {
                let jk = ws.cols[k];
                let cred = cost(jk) - self.v[jk] - h;
                if cred < ws.d[jk] {
                    ws.d[jk] = cred;
                    ws.pred[jk] = i;
                    if cred == mind {
                        if self.y[jk] == NONE {
                            *plo = lo;
                            *phi = hi;
                            return jk;
                        }
                        ws.cols[k] = ws.cols[hi];
                        ws.cols[hi] = jk;
                        hi += 1;
                    }
                }
            }
        }
        *plo = lo;
        *phi = hi;
        NONE
    }
}

struct PathWorkspace {
    /// Column order: `[..lo]` scanned, `[lo..hi]` at current minimum, rest todo.
    cols: Vec<usize>,
    d: Vec<f64>,
    pred: Vec<usize>,
}

/// Moves every column in `cols[lo..]` with minimal `d` to the front of that
/// range and returns the end of the minimal block.
#[allow(clippy::mut_range_bound)]
fn find_min_columns(lo: usize, d: &[f64], cols: &mut [usize]) -> usize {
    let mut hi = lo + 1;
    let mut mind = d[cols[lo]];
    for k in hi..cols.len() {
        let j = cols[k];
        if d[j] <= mind {
            if d[j] < mind {
                hi = lo;
                mind = d[j];
            }
            cols[k] = cols[hi];
            cols[hi] = j;
            hi += 1;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lap::{brute_force_assignment, permutation_total};
    use crate::linalg::{cosine_matrix, RngState};

    fn random_square(rng: &mut RngState, n: usize) -> Matrix {
        let data = (0..n * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Matrix::from_vec(n, n, data).unwrap()
    }

    #[test]
    fn identity_is_recovered() {
        for n in [2, 5, 33] {
            let a = solve_assignment_max(&Matrix::<f64>::identity(n)).unwrap();
            assert_eq!(a.perm, (0..n).collect::<Vec<_>>());
            assert_eq!(a.total, n as f64);
        }
    }

    #[test]
    fn permutation_matrix_is_recovered() {
        let mut rng = RngState::new(3);
        for n in [2, 7, 64] {
            let p = rng.permutation(n);
            let mut s = Matrix::<f64>::zeros(n, n);
            for (i, &j) in p.iter().enumerate() {
                s[(i, j)] = 1.0;
            }
            let a = solve_assignment_max(&s).unwrap();
            assert_eq!(a.perm, p);
            assert_eq!(a.total, n as f64);
        }
    }

    #[test]
    fn random_6x6_equals_exhaustive_search() {
        let mut rng = RngState::new(4);
        for _ in 0..200 {
            let s = random_square(&mut rng, 6);
            let fast = solve_assignment_max(&s).unwrap();
            let slow = brute_force_assignment(&s).unwrap();
            assert_eq!(fast.total, slow.total);
            assert_eq!(fast.perm, slow.perm);
        }
    }

    #[test]
    fn integer_ties_still_optimal() {
        let mut rng = RngState::new(8);
        for _ in 0..200 {
            let n = 2 + rng.below(6);
            let data = (0..n * n).map(|_| rng.below(3) as f64).collect();
            let s = Matrix::from_vec(n, n, data).unwrap();
            let fast = solve_assignment_max(&s).unwrap();
            assert!(is_bijection(&fast.perm));
            assert_eq!(fast.total, brute_force_assignment(&s).unwrap().total);
        }
    }

    #[test]
    fn beats_trace_and_random_permutations() {
        let mut rng = RngState::new(9);
        let s = random_square(&mut rng, 40);
        let a = solve_assignment_max(&s).unwrap();
        let trace: f64 = (0..40).map(|i| s[(i, i)]).sum();
        assert!(a.total >= trace);
        for _ in 0..50 {
            let p = rng.permutation(40);
            assert!(a.total >= permutation_total(&s, &p));
        }
    }

    #[test]
    fn scale_invariant_and_deterministic() {
        let mut rng = RngState::new(10);
        let a = rng.gaussian_matrix(100, 12);
        let b = rng.gaussian_matrix(100, 12);
        let s = cosine_matrix(&a, &b).unwrap();
        let base = solve_assignment_max(&s).unwrap();
        let mut scaled = s.clone();
        scaled.as_mut_slice().iter_mut().for_each(|x| *x *= 3.5);
        assert_eq!(solve_assignment_max(&scaled).unwrap().perm, base.perm);
        assert_eq!(solve_assignment_max(&s).unwrap(), base);
    }

    #[test]
    fn f32_input_agrees() {
        let mut rng = RngState::new(12);
        let s = random_square(&mut rng, 50);
        let s32: Matrix<f32> = s.cast();
        let a = solve_assignment_max(&s32).unwrap();
        let b = solve_assignment_max(&s32.cast::<f64>()).unwrap();
        assert_eq!(a.perm, b.perm);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(solve_assignment_max(&Matrix::<f64>::zeros(2, 3)), Err(Error::Shape { .. })));
        assert!(solve_assignment_max(&Matrix::<f64>::zeros(0, 0)).unwrap().is_empty());
    }
}
