use super::forward::{decode_row, Encoder, RowScratch};
use super::train::TrainConfig;
use super::{Arch, SaeParams};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Batch-averaged loss terms.
///
/// `mse` is the squared L2 error summed over dimensions. `sparsity` is
/// `l1_coeff * ||z||_1` for ReLU, `l1_coeff * ||relu(gate pre-activation)||_1`
/// for Gated, and zero for TopK. `aux` is the Gated gate-path reconstruction
/// error and zero otherwise.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub mse: f64,
    pub sparsity: f64,
    pub aux: f64,
    pub total: f64,
}

/// Loss only.
pub fn loss_value(p: &SaeParams, batch: &Matrix, cfg: &TrainConfig) -> Result<LossParts> {
    evaluate(p, batch, cfg.l1_coeff, false).map(|(l, _)| l)
}

/// Loss and its exact gradient with respect to every parameter.
///
/// The gradient is that of the loss as written: TopK and ReLU masks and the
/// Gated indicator are piecewise constant and contribute nothing, and the
/// Gated auxiliary term differentiates through the decoder. The unit-norm
/// projection of the decoder gradient is applied separately by the trainer
/// (see [`super::project_decoder_grads`]), so these values can be checked
/// against finite differences directly.
pub fn loss_and_grads(p: &SaeParams, batch: &Matrix, cfg: &TrainConfig) -> Result<(LossParts, SaeParams)> {
    evaluate(p, batch, cfg.l1_coeff, true).map(|(l, g)| (l, g.expect("grads requested")))
}

fn evaluate(p: &SaeParams, batch: &Matrix, l1_coeff: f64, want_grads: bool) -> Result<(LossParts, Option<SaeParams>)> {
    let (m, d, n) = (p.m(), p.d(), batch.rows());
    if batch.cols() != d {
        return Err(Error::shape("loss_and_grads", format!("{d} columns"), batch.cols()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let enc = Encoder::new(p);
    let mut scratch = RowScratch::default();
    let mut z = vec![0.0; m];
    let mut xhat = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut aux_x = vec![0.0; d];
    let mut ga = vec![0.0; d];
    let mut grads = want_grads.then(|| SaeParams::zeros(d, m, p.arch));
    let (mut mse, mut sparsity, mut aux) = (0.0, 0.0, 0.0);

    for x in batch.row_iter() {
        enc.encode_row(x, &mut z, &mut scratch);
        decode_row(p, &z, &mut xhat);
        for j in 0..d {
            let r = xhat[j] - x[j];
            mse += r * r;
            g[j] = 2.0 * r * inv_n;
        }

        match p.arch {
            Arch::Relu | Arch::TopK { .. } => {
                let l1 = if p.arch == Arch::Relu { l1_coeff } else { 0.0 };
                if l1 != 0.0 {
                    sparsity += l1 * z.iter().sum::<f64>();
                }
                let Some(gr) = grads.as_mut() else { continue };
                add(&mut gr.b_dec, &g, 1.0);
                for l in (0..m).filter(|&l| z[l] > 0.0) {
                    add(gr.w_dec.row_mut(l), &g, z[l]);
                    let dz = dot(&g, p.w_dec.row(l)) + l1 * inv_n;
                    add(gr.w_enc.row_mut(l), x, dz);
                    gr.b_enc[l] += dz;
                }
            }
            Arch::Gated => {
                let u = &scratch.u;
                aux_x.copy_from_slice(&p.b_dec);
                for l in 0..m {
                    let pg = u[l] + p.b_enc[l];
                    if pg > 0.0 {
                        sparsity += l1_coeff * pg;
                        add(&mut aux_x, p.w_dec.row(l), pg);
                    }
                }
                for j in 0..d {
                    let r = aux_x[j] - x[j];
                    aux += r * r;
                    ga[j] = 2.0 * r * inv_n;
                }
                let Some(gr) = grads.as_mut() else { continue };
                let gg = gr.gate.as_mut().expect("gated grads");
                add(&mut gr.b_dec, &g, 1.0);
                add(&mut gr.b_dec, &ga, 1.0);
                for l in 0..m {
                    let pg = u[l] + p.b_enc[l];
                    let mut du = 0.0;
                    if z[l] > 0.0 {
                        add(gr.w_dec.row_mut(l), &g, z[l]);
                        let dmag = dot(&g, p.w_dec.row(l));
                        let scale = enc.mag_scale[l];
                        gg.r_mag[l] += dmag * u[l] * scale;
                        gg.b_mag[l] += dmag;
                        du += dmag * scale;
                    }
                    if pg > 0.0 {
                        add(gr.w_dec.row_mut(l), &ga, pg);
                        let dpg = dot(&ga, p.w_dec.row(l)) + l1_coeff * inv_n;
                        gr.b_enc[l] += dpg;
                        du += dpg;
                    }
                    if du != 0.0 {
                        add(gr.w_enc.row_mut(l), x, du);
                    }
                }
            }
        }
    }

    let mse = mse * inv_n;
    let sparsity = sparsity * inv_n;
    let aux = aux * inv_n;
    let parts = LossParts { mse, sparsity, aux, total: mse + sparsity + aux };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite { context: format!("loss ({parts:?})") });
    }
    Ok((parts, grads))
}

#[inline]
fn add(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}
