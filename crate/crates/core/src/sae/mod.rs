//! Sparse autoencoders: TopK, ReLU with an L1 penalty, and Gated.
//!
//! All three share the same parameter layout. `w_enc` and `w_dec` are both
//! `m x d`, one row per latent, and decoder rows are kept at unit L2 norm.
//! Gated models additionally carry a per-latent magnitude rescale `r_mag`
//! and magnitude bias `b_mag`; their gate bias is `b_enc`.
//!
//! Forward passes:
//!
//! * TopK(k): `z = keep_top_k(relu(W_enc x + b_enc))`
//! * ReLU: `z = relu(W_enc x + b_enc)`
//! * Gated: `z = 1[W_enc x + b_enc > 0] * relu(exp(r_mag) * (W_enc x) + b_mag)`
//!
//! and in every case `x_hat = z W_dec + b_dec`.

mod adam;
mod forward;
mod grad;
mod train;

pub use adam::Adam;
pub use forward::{decode, encode};
pub use grad::{loss_and_grads, loss_value, LossParts};
pub use train::{
    baseline_mse, batch_schedule, evaluate_mse, firing_counts, project_decoder_grads, schedule_fingerprint, train,
    train_with_observer, FiringStats, TrainConfig, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::linalg::{norm, Matrix, RngState};

/// Encoder rows start as copies of the decoder rows times this factor.
pub const ENCODER_INIT_SCALE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    #[serde(rename = "topk")]
    TopK {
        k: usize,
    },
    Relu,
    Gated,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::TopK { .. } => "topk",
            Arch::Relu => "relu",
            Arch::Gated => "gated",
        }
    }

    pub fn k(self) -> Option<usize> {
        match self {
            Arch::TopK { k } => Some(k),
            _ => None,
        }
    }

    /// Parses `topk`, `relu` or `gated`; `k` is required for `topk` only.
    pub fn parse(name: &str, k: Option<usize>) -> Option<Self> {
        match name {
            "topk" => k.map(|k| Arch::TopK { k }),
            "relu" => Some(Arch::Relu),
            "gated" => Some(Arch::Gated),
            _ => None,
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::TopK { k } => write!(f, "topk(k={k})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Magnitude-path parameters of a Gated SAE.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub r_mag: Vec<f64>,
    pub b_mag: Vec<f64>,
}

/// One sparse autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct SaeParams {
    pub w_enc: Matrix,
    pub b_enc: Vec<f64>,
    /// Row `i` is the decoder direction of latent `i`.
    pub w_dec: Matrix,
    pub b_dec: Vec<f64>,
    pub arch: Arch,
    /// Present iff `arch` is [`Arch::Gated`].
    pub gate: Option<GateParams>,
}

impl SaeParams {
    pub fn m(&self) -> usize {
        self.w_enc.rows()
    }

    pub fn d(&self) -> usize {
        self.w_enc.cols()
    }

    /// All-zero parameters (decoder included, so not unit norm).
    pub fn zeros(d: usize, m: usize, arch: Arch) -> Self {
        Self {
            w_enc: Matrix::zeros(m, d),
            b_enc: vec![0.0; m],
            w_dec: Matrix::zeros(m, d),
            b_dec: vec![0.0; d],
            arch,
            gate: (arch == Arch::Gated).then(|| GateParams { r_mag: vec![0.0; m], b_mag: vec![0.0; m] }),
        }
    }

    /// Parameter buffers in a fixed order: `w_enc, b_enc, w_dec, b_dec`, then
    /// `r_mag, b_mag` for Gated.
    pub fn buffers(&self) -> Vec<&[f64]> {
        let mut out = vec![self.w_enc.as_slice(), &self.b_enc[..], self.w_dec.as_slice(), &self.b_dec[..]];
        if let Some(g) = &self.gate {
            out.push(&g.r_mag);
            out.push(&g.b_mag);
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out =
            vec![self.w_enc.as_mut_slice(), &mut self.b_enc[..], self.w_dec.as_mut_slice(), &mut self.b_dec[..]];
        if let Some(g) = &mut self.gate {
            out.push(&mut g.r_mag);
            out.push(&mut g.b_mag);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// `max_i | ||w_dec_i|| - 1 |`.
    pub fn decoder_norm_deviation(&self) -> f64 {
        self.w_dec.row_iter().map(|r| (norm(r) - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Relabels latents: latent `i` of the result is latent `order[i]` of
    /// `self`. The represented function is unchanged.
    pub fn permute_latents(&self, order: &[usize]) -> Self {
        let pick = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            w_enc: self.w_enc.select_rows(order),
            b_enc: pick(&self.b_enc),
            w_dec: self.w_dec.select_rows(order),
            b_dec: self.b_dec.clone(),
            arch: self.arch,
            gate: self.gate.as_ref().map(|g| GateParams { r_mag: pick(&g.r_mag), b_mag: pick(&g.b_mag) }),
        }
    }
}

/// Random unit decoder rows, encoder tied to the decoder at init, zero biases.
pub fn init_params(d: usize, m: usize, arch: Arch, rng: &mut RngState) -> SaeParams {
    assert!(d >= 1 && m >= 1, "init_params needs d >= 1 and m >= 1");
    let mut p = SaeParams::zeros(d, m, arch);
    for i in 0..m {
        let row = p.w_dec.row_mut(i);
        loop {
            row.iter_mut().for_each(|x| *x = rng.gaussian());
            let n = norm(row);
            if n > 1e-12 {
                row.iter_mut().for_each(|x| *x /= n);
                break;
            }
        }
    }
    p.w_enc = p.w_dec.clone();
    p.w_enc.as_mut_slice().iter_mut().for_each(|e| *e *= ENCODER_INIT_SCALE);
    p
}
