use rayon::prelude::*;

use super::{Arch, SaeParams};
use crate::error::{Error, Result};
use crate::linalg::{dot, topk_in_place, Matrix};

/// Per-call encoder state: the model plus precomputed `exp(r_mag)`.
pub(crate) struct Encoder<'a> {
    pub p: &'a SaeParams,
    pub mag_scale: Vec<f64>,
}

/// Reusable per-row buffers.
#[derive(Default)]
pub(crate) struct RowScratch {
    /// `W_enc x`, before any bias.
    pub u: Vec<f64>,
    idx: Vec<usize>,
    kept: Vec<(usize, f64)>,
}

impl<'a> Encoder<'a> {
    pub fn new(p: &'a SaeParams) -> Self {
        let mag_scale = p.gate.as_ref().map(|g| g.r_mag.iter().map(|r| r.exp()).collect()).unwrap_or_default();
        Self { p, mag_scale }
    }

    /// Writes the latent code of one sample into `z` and leaves `W_enc x` in
    /// `scratch.u`.
    pub fn encode_row(&self, x: &[f64], z: &mut [f64], scratch: &mut RowScratch) {
        let p = self.p;
        let m = p.m();
        scratch.u.resize(m, 0.0);
        for (l, u) in scratch.u.iter_mut().enumerate() {
            *u = dot(p.w_enc.row(l), x);
        }
        let u = &scratch.u;
        match p.arch {
            Arch::Relu => {
                for l in 0..m {
                    z[l] = (u[l] + p.b_enc[l]).max(0.0);
                }
            }
            Arch::TopK { k } => {
                scratch.idx.clear();
                for l in 0..m {
                    z[l] = (u[l] + p.b_enc[l]).max(0.0);
                    if z[l] > 0.0 {
                        scratch.idx.push(l);
                    }
                }
                if scratch.idx.len() > k {
                    topk_in_place(z, k, &mut scratch.idx);
                    scratch.kept.clear();
                    scratch.kept.extend(scratch.idx.iter().map(|&l| (l, z[l])));
                    z.iter_mut().for_each(|v| *v = 0.0);
                    for &(l, v) in &scratch.kept {
                        z[l] = v;
                    }
                }
            }
            Arch::Gated => {
                let g = p.gate.as_ref().expect("gated params");
                for l in 0..m {
                    let gate = u[l] + p.b_enc[l] > 0.0;
                    let mag = (u[l] * self.mag_scale[l] + g.b_mag[l]).max(0.0);
                    z[l] = if gate { mag } else { 0.0 };
                }
            }
        }
    }
}

/// `x_hat = z W_dec + b_dec` for one sample, skipping zero latents.
pub(crate) fn decode_row(p: &SaeParams, z: &[f64], out: &mut [f64]) {
    out.copy_from_slice(&p.b_dec);
    for (l, &zl) in z.iter().enumerate() {
        if zl != 0.0 {
            for (o, w) in out.iter_mut().zip(p.w_dec.row(l)) {
                *o += zl * w;
            }
        }
    }
}

/// Latent activations for every row of `x` (`n x d` to `n x m`).
pub fn encode(p: &SaeParams, x: &Matrix) -> Result<Matrix> {
    if x.cols() != p.d() {
        return Err(Error::shape("encode", format!("{} columns", p.d()), x.cols()));
    }
    let m = p.m();
    let mut z = Matrix::zeros(x.rows(), m);
    if m == 0 || x.rows() == 0 {
        return Ok(z);
    }
    let enc = Encoder::new(p);
    z.as_mut_slice().par_chunks_mut(m * 256).enumerate().for_each_init(RowScratch::default, |scratch, (chunk, out)| {
        for (r, zr) in out.chunks_mut(m).enumerate() {
            enc.encode_row(x.row(chunk * 256 + r), zr, scratch);
        }
    });
    Ok(z)
}

/// Reconstructions for every row of `z` (`n x m` to `n x d`).
pub fn decode(p: &SaeParams, z: &Matrix) -> Result<Matrix> {
    if z.cols() != p.m() {
        return Err(Error::shape("decode", format!("{} columns", p.m()), z.cols()));
    }
    let mut out = Matrix::zeros(z.rows(), p.d());
    for i in 0..z.rows() {
        decode_row(p, z.row(i), out.row_mut(i));
    }
    Ok(out)
}
