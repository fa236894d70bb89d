use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::forward::{decode_row, Encoder, RowScratch};
use super::grad::{loss_and_grads, LossParts};
use super::{init_params, Adam, Arch, SaeParams};
use crate::error::{Error, Result};
use crate::io::ActivationDataset;
use crate::linalg::{dot, norm, Matrix, RngState};

/// Everything that determines a training run besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Only affects initialization; the batch schedule ignores it.
    pub seed: u64,
    pub arch: Arch,
    /// Number of latents `m`.
    pub latents: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Sparsity weight for ReLU and Gated; ignored by TopK.
    pub l1_coeff: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Train on mean-subtracted inputs and fold the mean back into the
    /// biases of the returned model.
    pub center_inputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            arch: Arch::TopK { k: 4 },
            latents: 128,
            steps: 10_000,
            batch_size: 256,
            learning_rate: 1e-3,
            l1_coeff: 0.0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            center_inputs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.latents == 0 {
            return bad("latents must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l1_coeff >= 0.0 && self.l1_coeff.is_finite()) {
            return bad("l1_coeff must be nonnegative");
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0 < b1 && b1 < 1.0 && 0.0 < b2 && b2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if let Arch::TopK { k: 0 } = self.arch {
            return bad("topk needs k >= 1");
        }
        Ok(())
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: SaeParams,
    /// Total batch loss at every step.
    pub losses: Vec<f64>,
    /// Hex SHA-256 of the batch schedule actually consumed.
    pub schedule_fingerprint: String,
}

/// How often each latent fired (activation strictly positive).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiringStats {
    pub counts: Vec<u64>,
    pub tokens_seen: u64,
}

impl FiringStats {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Mean number of active latents per sample.
    pub fn mean_l0(&self) -> f64 {
        self.total() as f64 / self.tokens_seen.max(1) as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let t = self.tokens_seen.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

/// Start index of each step's batch. Batches are consecutive rows, wrapping
/// around the end of the dataset; nothing here depends on the seed.
pub fn batch_schedule(n: usize, batch_size: usize, steps: usize) -> impl Iterator<Item = usize> {
    (0..steps).map(move |s| ((s as u128 * batch_size as u128) % n as u128) as usize)
}

struct ScheduleHasher(Sha256);

impl ScheduleHasher {
    fn new(n: usize, batch_size: usize, steps: usize) -> Self {
        let mut h = Sha256::new();
        for v in [n, batch_size, steps] {
            h.update((v as u64).to_le_bytes());
        }
        Self(h)
    }

    fn push(&mut self, start: usize) {
        self.0.update((start as u64).to_le_bytes());
    }

    fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

/// Fingerprint of [`batch_schedule`] as [`train`] reports it.
pub fn schedule_fingerprint(n: usize, batch_size: usize, steps: usize) -> String {
    let mut h = ScheduleHasher::new(n, batch_size, steps);
    batch_schedule(n, batch_size, steps).for_each(|s| h.push(s));
    h.finish()
}

/// Removes from each decoder-row gradient its component along that row.
pub fn project_decoder_grads(params: &SaeParams, grads: &mut SaeParams) {
    for l in 0..params.m() {
        let w = params.w_dec.row(l);
        let g = grads.w_dec.row_mut(l);
        let c = dot(g, w);
        for (gj, wj) in g.iter_mut().zip(w) {
            *gj -= c * wj;
        }
    }
}

fn renormalize_decoder(params: &mut SaeParams) -> Result<()> {
    for l in 0..params.m() {
        let row = params.w_dec.row_mut(l);
        let n = norm(row);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroRow { index: l });
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(())
}

pub fn train(dataset: &ActivationDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(dataset, cfg, |_, _, _| {})
}

/// [`train`], calling `observer(step, params, loss)` after every step.
pub fn train_with_observer<F>(dataset: &ActivationDataset, cfg: &TrainConfig, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &SaeParams, &LossParts),
{
    cfg.validate()?;
    let (n, d) = (dataset.n(), dataset.d());
    let mut rng = RngState::new(cfg.seed);
    let mut params = init_params(d, cfg.latents, cfg.arch, &mut rng);
    let mean = cfg.center_inputs.then(|| dataset.mean());

    let sizes: Vec<usize> = params.buffers().iter().map(|b| b.len()).collect();
    let mut adam = Adam::new(cfg.learning_rate, cfg.adam_betas, cfg.adam_eps, &sizes);
    let mut hasher = ScheduleHasher::new(n, cfg.batch_size, cfg.steps);
    let mut batch = Matrix::zeros(cfg.batch_size, d);
    let mut losses = Vec::with_capacity(cfg.steps);

    for (step, start) in batch_schedule(n, cfg.batch_size, cfg.steps).enumerate() {
        hasher.push(start);
        for r in 0..cfg.batch_size {
            let src = dataset.sample((start + r) % n);
            let dst = batch.row_mut(r);
            dst.copy_from_slice(src);
            if let Some(mu) = &mean {
                dst.iter_mut().zip(mu).for_each(|(x, m)| *x -= m);
            }
        }

        let (loss, mut grads) = loss_and_grads(&params, &batch, cfg).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Divergence { step, loss: f64::NAN },
            other => other,
        })?;
        project_decoder_grads(&params, &mut grads);
        adam.step(params.buffers_mut(), grads.buffers());
        renormalize_decoder(&mut params)?;
        if !params.is_finite() {
            return Err(Error::Divergence { step, loss: loss.total });
        }
        losses.push(loss.total);
        observer(step, &params, &loss);
    }

    if let Some(mu) = &mean {
        absorb_input_shift(&mut params, mu);
    }
    Ok(TrainOutcome { params, losses, schedule_fingerprint: hasher.finish() })
}

/// Rewrites a model trained on `x - mu` into the equivalent model on `x`.
fn absorb_input_shift(p: &mut SaeParams, mu: &[f64]) {
    let shift: Vec<f64> = p.w_enc.row_iter().map(|w| dot(w, mu)).collect();
    for (b, s) in p.b_enc.iter_mut().zip(&shift) {
        *b -= s;
    }
    if let Some(g) = &mut p.gate {
        for l in 0..shift.len() {
            g.b_mag[l] -= g.r_mag[l].exp() * shift[l];
        }
    }
    for (b, m) in p.b_dec.iter_mut().zip(mu) {
        *b += m;
    }
}

const EVAL_CHUNK: usize = 1024;

/// Mean over the dataset of `||x - x_hat||^2`.
pub fn evaluate_mse(p: &SaeParams, dataset: &ActivationDataset) -> Result<f64> {
    if dataset.d() != p.d() {
        return Err(Error::shape("evaluate_mse", format!("d = {}", p.d()), dataset.d()));
    }
    let enc = Encoder::new(p);
    let n = dataset.n();
    let partial: Vec<f64> = (0..n.div_ceil(EVAL_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut scratch = RowScratch::default();
            let mut z = vec![0.0; p.m()];
            let mut xhat = vec![0.0; p.d()];
            let mut s = 0.0;
            for i in c * EVAL_CHUNK..((c + 1) * EVAL_CHUNK).min(n) {
                let x = dataset.sample(i);
                enc.encode_row(x, &mut z, &mut scratch);
                decode_row(p, &z, &mut xhat);
                s += x.iter().zip(&xhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            s
        })
        .collect();
    Ok(partial.iter().sum::<f64>() / n as f64)
}

/// MSE of always predicting the dataset mean.
pub fn baseline_mse(dataset: &ActivationDataset) -> f64 {
    let mu = dataset.mean();
    let total: f64 =
        dataset.samples().row_iter().map(|x| x.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum();
    total / dataset.n() as f64
}

pub fn firing_counts(p: &SaeParams, dataset: &ActivationDataset) -> Result<FiringStats> {
    if dataset.d() != p.d() {
        return Err(Error::shape("firing_counts", format!("d = {}", p.d()), dataset.d()));
    }
    let enc = Encoder::new(p);
    let n = dataset.n();
    let m = p.m();
    let counts = (0..n.div_ceil(EVAL_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut scratch = RowScratch::default();
            let mut z = vec![0.0; m];
            let mut counts = vec![0u64; m];
            for i in c * EVAL_CHUNK..((c + 1) * EVAL_CHUNK).min(n) {
                enc.encode_row(dataset.sample(i), &mut z, &mut scratch);
                for (cnt, &v) in counts.iter_mut().zip(&z) {
                    *cnt += u64::from(v > 0.0);
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; m],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(FiringStats { counts, tokens_seen: n as u64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{gen_synthetic, Dtype, SyntheticSpec};
    use crate::sae::{encode, loss_value};

    fn small_data(seed: u64) -> ActivationDataset {
        gen_synthetic(&SyntheticSpec {
            n_true: 16,
            d: 8,
            n_samples: 2000,
            p_active: 0.1,
            noise_sigma: 0.01,
            seed,
            ..SyntheticSpec::default()
        })
        .dataset
    }

    fn quick_cfg(arch: Arch, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            arch,
            latents: 24,
            steps: 300,
            batch_size: 32,
            learning_rate: 3e-3,
            l1_coeff: if matches!(arch, Arch::TopK { .. }) { 0.0 } else { 0.05 },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_wraps_and_ignores_seed() {
        let starts: Vec<usize> = batch_schedule(10, 4, 5).collect();
        assert_eq!(starts, vec![0, 4, 8, 2, 6]);
        let data = small_data(1);
        let a = train(&data, &quick_cfg(Arch::TopK { k: 3 }, 1)).unwrap();
        let b = train(&data, &quick_cfg(Arch::TopK { k: 3 }, 2)).unwrap();
        assert_eq!(a.schedule_fingerprint, b.schedule_fingerprint);
        assert_eq!(a.schedule_fingerprint, schedule_fingerprint(data.n(), 32, 300));
        assert_ne!(a.params.w_dec, b.params.w_dec);
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let data = small_data(2);
        for arch in [Arch::TopK { k: 3 }, Arch::Relu, Arch::Gated] {
            let a = train(&data, &quick_cfg(arch, 9)).unwrap();
            let b = train(&data, &quick_cfg(arch, 9)).unwrap();
            assert_eq!(a.params, b.params);
            assert_eq!(a.losses, b.losses);
        }
    }

    #[test]
    fn unit_norm_after_every_step_and_loss_drops() {
        let data = small_data(3);
        for arch in [Arch::TopK { k: 3 }, Arch::Relu, Arch::Gated] {
            let mut worst: f64 = 0.0;
            let out = train_with_observer(&data, &quick_cfg(arch, 4), |_, p, _| {
                worst = worst.max(p.decoder_norm_deviation());
            })
            .unwrap();
            assert!(worst < 1e-6, "{arch}: {worst}");
            let head: f64 = out.losses[..20].iter().sum();
            let tail: f64 = out.losses[out.losses.len() - 20..].iter().sum();
            assert!(tail < head, "{arch}: loss did not drop");
        }
    }

    #[test]
    fn centering_is_folded_into_biases() {
        let mut samples = small_data(5).samples().clone();
        samples.as_mut_slice().iter_mut().for_each(|x| *x += 3.0);
        let data = ActivationDataset::new(samples, Dtype::F64, "shifted").unwrap();
        for arch in [Arch::TopK { k: 3 }, Arch::Relu, Arch::Gated] {
            let cfg = TrainConfig { center_inputs: true, ..quick_cfg(arch, 6) };
            let out = train(&data, &cfg).unwrap();
            // the raw-input model on x must equal the centered model on x - mu
            let mu = data.mean();
            let mut centered = data.samples().clone();
            for i in 0..centered.rows() {
                centered.row_mut(i).iter_mut().zip(&mu).for_each(|(x, m)| *x -= m);
            }
            let mut inner = out.params.clone();
            let shift: Vec<f64> = inner.w_enc.row_iter().map(|w| dot(w, &mu)).collect();
            for l in 0..inner.m() {
                inner.b_enc[l] += shift[l];
                if let Some(g) = &mut inner.gate {
                    g.b_mag[l] += g.r_mag[l].exp() * shift[l];
                }
            }
            inner.b_dec.iter_mut().zip(&mu).for_each(|(b, m)| *b -= m);
            let z_raw = encode(&out.params, data.samples()).unwrap();
            let z_centered = encode(&inner, &centered).unwrap();
            assert!(z_raw.max_abs_diff(&z_centered) < 1e-9, "{arch}");
            let l = loss_value(&inner, &centered, &cfg).unwrap();
            assert!(l.total.is_finite());
        }
    }

    #[test]
    fn firing_counts_match_naive_loop() {
        let data = small_data(7);
        let p = train(&data, &quick_cfg(Arch::Relu, 1)).unwrap().params;
        let stats = firing_counts(&p, &data).unwrap();
        let z = encode(&p, data.samples()).unwrap();
        let mut naive = vec![0u64; p.m()];
        for row in z.row_iter() {
            for (c, &v) in naive.iter_mut().zip(row) {
                if v > 0.0 {
                    *c += 1;
                }
            }
        }
        assert_eq!(stats.counts, naive);
        assert_eq!(stats.tokens_seen, 2000);
        assert!(stats.mean_l0().is_finite());
    }

    #[test]
    fn firing_counts_zero_data() {
        let data = ActivationDataset::new(Matrix::zeros(50, 8), Dtype::F64, "zeros").unwrap();
        let p = init_params(8, 12, Arch::TopK { k: 2 }, &mut RngState::new(0));
        assert_eq!(firing_counts(&p, &data).unwrap().total(), 0);
    }

    #[test]
    fn topk_firing_sum_is_k_per_token() {
        let data = small_data(8);
        let p = init_params(8, 40, Arch::TopK { k: 4 }, &mut RngState::new(3));
        let stats = firing_counts(&p, &data).unwrap();
        assert_eq!(stats.total(), 4 * 2000);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { latents: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { adam_betas: (1.0, 0.9), ..TrainConfig::default() },
            TrainConfig { arch: Arch::TopK { k: 0 }, ..TrainConfig::default() },
            TrainConfig { l1_coeff: -1.0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
