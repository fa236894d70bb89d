use rayon::prelude::*;

use super::matrix::{dot, norm, Matrix, Scalar};
use crate::error::{Error, Result};

/// Default tile edge for [`cosine_matrix_blocked`]. 64 rows of a few hundred
/// f64 columns keeps both tiles in L2 on common desktop parts.
pub const DEFAULT_BLOCK: usize = 64;

/// Returns a copy of `a` with every row scaled to unit L2 norm.
pub fn row_l2_normalize(a: &Matrix) -> Result<Matrix> {
    let mut out = a.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroRow { index: i });
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(out)
}

/// Cosine similarity between every row of `a` and every row of `b`, in f64.
pub fn cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    cosine_matrix_blocked(a, b, DEFAULT_BLOCK)
}

/// Tiled cosine-similarity matrix with a configurable tile edge and output
/// precision.
///
/// Rows are normalized once up front; tiles of `block` rows of `a` against
/// `block` rows of `b` are then filled with plain dot products. Row tiles run
/// on the rayon pool, but every entry is a single sequential dot product, so
/// the output is bitwise identical for any thread count. Entries are clamped
/// to `[-1, 1]`.
pub fn cosine_matrix_blocked<T: Scalar>(a: &Matrix, b: &Matrix, block: usize) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(Error::shape("cosine_matrix", format!("{} columns", a.cols()), b.cols()));
    }
    if a.cols() == 0 {
        return Err(Error::InvalidArgument("cosine_matrix needs d >= 1".into()));
    }
    let block = block.max(1);
    let an = row_l2_normalize(a)?;
    let bn = row_l2_normalize(b)?;
    let (m1, m2) = (a.rows(), b.rows());
    let mut out = Matrix::<T>::zeros(m1, m2);
    if m1 == 0 || m2 == 0 {
        return Ok(out);
    }

    out.as_mut_slice().par_chunks_mut(block * m2).enumerate().for_each(|(tile, chunk)| {
        let i0 = tile * block;
        let rows_here = chunk.len() / m2;
        for j0 in (0..m2).step_by(block) {
            let j1 = (j0 + block).min(m2);
            for di in 0..rows_here {
                let ar = an.row(i0 + di);
                let out_row = &mut chunk[di * m2..(di + 1) * m2];
                for j in j0..j1 {
                    let c = dot(ar, bn.row(j)).clamp(-1.0, 1.0);
                    out_row[j] = T::from_f64(c);
                }
            }
        }
    });
    Ok(out)
}
