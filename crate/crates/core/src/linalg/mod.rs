//! Dense numeric kernels shared by the rest of the crate.

mod cosine;
mod matrix;
mod rng;
mod topk;

pub use cosine::{cosine_matrix, cosine_matrix_blocked, row_l2_normalize, DEFAULT_BLOCK};
pub use matrix::{dot, norm, Matrix, Scalar};
pub use rng::RngState;
pub use topk::{topk_in_place, topk_select};
