//! `gen-synthetic`, `train` and `sweep`.

use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use saeoverlap::align::SharedCriterion;
use saeoverlap::io::{
    gen_synthetic as generate, read_activations, write_activations, write_checkpoint, ActivationDataset, Dtype,
    SyntheticSpec, Table,
};
use saeoverlap::linalg::cosine_matrix;
use saeoverlap::multiseed::{only_in_base_curve, pairwise_matchings, SeedEnsemble};
use saeoverlap::sae::{baseline_mse, evaluate_mse, firing_counts, train_with_observer, Arch, SaeParams, TrainConfig};

use crate::config::resolve;
use crate::run::Run;
use crate::{required, with_run, CliError};

#[derive(Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_true: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    p_active: Option<f64>,
    #[arg(long)]
    coeff_lo: Option<f64>,
    #[arg(long)]
    coeff_hi: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    dtype: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenSettings {
    out: Option<PathBuf>,
    n_true: usize,
    d: usize,
    n_samples: usize,
    p_active: f64,
    coeff_lo: f64,
    coeff_hi: f64,
    noise_sigma: f64,
    seed: u64,
    dtype: Dtype,
}

impl Default for GenSettings {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            out: None,
            n_true: s.n_true,
            d: s.d,
            n_samples: s.n_samples,
            p_active: s.p_active,
            coeff_lo: s.coeff_range.0,
            coeff_hi: s.coeff_range.1,
            noise_sigma: s.noise_sigma,
            seed: s.seed,
            dtype: Dtype::F64,
        }
    }
}

pub fn gen_synthetic(args: GenArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let s: GenSettings = resolve("gen-synthetic", cfg, &args)?;
    let spec = SyntheticSpec {
        n_true: s.n_true,
        d: s.d,
        n_samples: s.n_samples,
        p_active: s.p_active,
        coeff_range: (s.coeff_lo, s.coeff_hi),
        noise_sigma: s.noise_sigma,
        seed: s.seed,
    };
    let valid = spec.d >= 1
        && spec.n_true >= 1
        && spec.n_samples >= 1
        && spec.p_active > 0.0
        && spec.p_active < 1.0
        && spec.noise_sigma >= 0.0
        && 0.0 <= s.coeff_lo
        && s.coeff_lo <= s.coeff_hi;
    if !valid {
        return Err(CliError::Usage(format!("invalid synthetic spec {spec:?}")));
    }
    with_run("gen-synthetic", s.out.as_deref(), &s, |run| {
        run.manifest.seeds.push(s.seed);
        let g = generate(&spec);
        let data = ActivationDataset::new(g.dataset.samples().clone(), s.dtype, g.dataset.source.clone())?;
        write_activations(run.output("data.actv"), &data)?;
        let features = ActivationDataset::new(g.features.clone(), Dtype::F64, "ground truth")?;
        write_activations(run.output("features.actv"), &features)?;

        let mut t = Table::new("feature activity", &["feature", "samples_active"], "count of samples", run.hash());
        for (f, c) in g.feature_counts().into_iter().enumerate() {
            t.push(vec![f.into(), c.into()]);
        }
        run.table("feature_counts.csv", &t)?;
        Ok(())
    })
}

#[derive(Args, Clone, Serialize)]
pub struct TrainArgs {
    /// Activation file (ACTV).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional ground-truth dictionary (ACTV, one feature per row) to score
    /// feature recovery against.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// topk, relu or gated.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    latents: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l1_coeff: Option<f64>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    center_inputs: Option<bool>,
    /// Loss table row interval.
    #[arg(long)]
    log_every: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    features: Option<PathBuf>,
    seed: u64,
    arch: String,
    k: usize,
    latents: usize,
    steps: usize,
    batch_size: usize,
    learning_rate: f64,
    l1_coeff: f64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    center_inputs: bool,
    log_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            data: None,
            out: None,
            features: None,
            seed: c.seed,
            arch: c.arch.name().into(),
            k: c.arch.k().unwrap_or(4),
            latents: c.latents,
            steps: c.steps,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            l1_coeff: c.l1_coeff,
            adam_beta1: c.adam_betas.0,
            adam_beta2: c.adam_betas.1,
            adam_eps: c.adam_eps,
            center_inputs: c.center_inputs,
            log_every: 100,
        }
    }
}

impl TrainSettings {
    fn config(&self) -> Result<TrainConfig, CliError> {
        let arch = Arch::parse(&self.arch, Some(self.k))
            .ok_or_else(|| CliError::Usage(format!("unknown arch {:?}", self.arch)))?;
        let c = TrainConfig {
            seed: self.seed,
            arch,
            latents: self.latents,
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            l1_coeff: self.l1_coeff,
            adam_betas: (self.adam_beta1, self.adam_beta2),
            adam_eps: self.adam_eps,
            center_inputs: self.center_inputs,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub arch: String,
    pub latents: usize,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub mse: f64,
    pub baseline_mse: f64,
    pub fvu: f64,
    pub mean_l0: f64,
    pub dead_latents: usize,
    pub schedule_fingerprint: String,
    /// Mean over true features of the best decoder-row cosine.
    pub recovery_mmcs: Option<f64>,
    /// Fraction of true features with a decoder row at cosine >= 0.9.
    pub recovered_fraction: Option<f64>,
}

/// A trained model and the tables that describe it.
struct Fitted {
    params: SaeParams,
    log: Table,
    firing: Table,
    summary: TrainSummary,
}

/// Trains one model. Touches no files, so several can run at once.
fn fit_model(
    hash: &str,
    s: &TrainSettings,
    cfg: &TrainConfig,
    data: &ActivationDataset,
    features: Option<&ActivationDataset>,
) -> Result<Fitted, CliError> {
    let every = s.log_every.max(1);
    let mut log = Table::new(
        "training loss",
        &["step", "total", "mse", "sparsity", "aux"],
        "loss per sample, averaged over the batch",
        hash,
    );
    let last = cfg.steps.saturating_sub(1);
    let out = train_with_observer(data, cfg, |step, _, l| {
        if step % every == 0 || step == last {
            log.push(vec![step.into(), l.total.into(), l.mse.into(), l.sparsity.into(), l.aux.into()]);
        }
    })?;

    let stats = firing_counts(&out.params, data)?;
    let mut firing = Table::new(
        "latent firing",
        &["latent", "count", "frequency"],
        "samples with activation > 0; fraction of samples",
        hash,
    );
    for (l, (&c, f)) in stats.counts.iter().zip(stats.frequencies()).enumerate() {
        firing.push(vec![l.into(), c.into(), f.into()]);
    }

    let mse = evaluate_mse(&out.params, data)?;
    let base = baseline_mse(data);
    let (recovery_mmcs, recovered_fraction) = match features {
        Some(f) => {
            let s = cosine_matrix(f.samples(), &out.params.w_dec)?;
            let best: Vec<f64> = s.row_iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
            let n = best.len() as f64;
            (Some(best.iter().sum::<f64>() / n), Some(best.iter().filter(|&&c| c >= 0.9).count() as f64 / n))
        }
        None => (None, None),
    };
    let summary = TrainSummary {
        arch: cfg.arch.to_string(),
        latents: cfg.latents,
        seed: cfg.seed,
        steps: cfg.steps,
        final_loss: out.losses.last().copied(),
        mse,
        baseline_mse: base,
        fvu: if base > 0.0 { mse / base } else { f64::NAN },
        mean_l0: stats.mean_l0(),
        dead_latents: stats.counts.iter().filter(|&&c| c == 0).count(),
        schedule_fingerprint: out.schedule_fingerprint,
        recovery_mmcs,
        recovered_fraction,
    };
    Ok(Fitted { params: out.params, log, firing, summary })
}

fn save_model(run: &mut Run, prefix: &str, cfg: &TrainConfig, f: &Fitted) -> Result<(), CliError> {
    write_checkpoint(run.output(&format!("{prefix}sae.saec")), &f.params, cfg)?;
    run.table(&format!("{prefix}loss.csv"), &f.log)?;
    run.table(&format!("{prefix}firing.csv"), &f.firing)?;
    run.json(&format!("{prefix}summary.json"), &f.summary)?;
    Ok(())
}

fn load_inputs(run: &mut Run, s: &TrainSettings) -> Result<(ActivationDataset, Option<ActivationDataset>), CliError> {
    let path = required(&s.data, "data")?;
    run.input(&path);
    let data = read_activations(&path)?;
    let features = match &s.features {
        Some(p) => {
            run.input(p);
            let f = read_activations(p)?;
            if f.d() != data.d() {
                return Err(saeoverlap::Error::Shape {
                    op: "features",
                    expected: format!("d = {}", data.d()),
                    got: format!("d = {}", f.d()),
                }
                .into());
            }
            Some(f)
        }
        None => None,
    };
    Ok((data, features))
}

pub fn train(args: TrainArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let s: TrainSettings = resolve("train", cfg, &args)?;
    let config = s.config()?;
    with_run("train", s.out.as_deref(), &s, |run| {
        run.manifest.seeds.push(config.seed);
        let (data, features) = load_inputs(run, &s)?;
        let fitted = fit_model(run.hash(), &s, &config, &data, features.as_ref())?;
        save_model(run, "", &config, &fitted)
    })
}

#[derive(Args, Serialize)]
pub struct SweepArgs {
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated latent counts; defaults to the single `latents`.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    /// Comma-separated TopK k values; defaults to the single `k`.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Shared-latent threshold for the seed comparison.
    #[arg(long)]
    tau: Option<f64>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SweepSettings {
    seeds: Vec<u64>,
    widths: Vec<usize>,
    ks: Vec<usize>,
    tau: f64,
    train: TrainSettings,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1],
            widths: Vec::new(),
            ks: Vec::new(),
            tau: SharedCriterion::default().tau,
            train: TrainSettings::default(),
        }
    }
}

pub fn sweep(args: SweepArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let s: SweepSettings = resolve("sweep", cfg, &args)?;
    let crit = SharedCriterion::new(s.tau, true)?;
    if s.seeds.is_empty() {
        return Err(CliError::Usage("sweep needs at least one seed".into()));
    }
    let widths = if s.widths.is_empty() { vec![s.train.latents] } else { s.widths.clone() };
    let topk = s.train.arch == "topk";
    let ks = if s.ks.is_empty() || !topk { vec![s.train.k] } else { s.ks.clone() };
    // validate every cell before spending time on any of them
    let mut cells = Vec::new();
    for &m in &widths {
        for &k in &ks {
            let mut ts = s.train.clone();
            ts.latents = m;
            ts.k = k;
            ts.config()?;
            cells.push((m, k, ts));
        }
    }

    with_run("sweep", s.train.out.as_deref(), &s, |run| {
        run.manifest.seeds = s.seeds.clone();
        let (data, features) = load_inputs(run, &s.train)?;
        let mut runs = Table::new(
            "sweep runs",
            &["latents", "k", "seed", "checkpoint", "final_loss", "fvu", "mean_l0", "dead_latents", "recovery_mmcs"],
            "fvu = mse / variance; mean_l0 in active latents per sample",
            run.hash(),
        );
        let mut cell_table = Table::new(
            "seed comparison per cell",
            &[
                "latents",
                "k",
                "seeds",
                "mean_shared_fraction",
                "mean_cos_enc",
                "mean_cos_dec",
                "only_in_base_all_seeds",
            ],
            "fractions of latents; cosine similarity",
            run.hash(),
        );
        let mut curve = Table::new(
            "only-in-base curve per cell",
            &["latents", "k", "subset_size", "only_in_base_fraction"],
            "fraction of base latents",
            run.hash(),
        );
        for (m, k, ts) in &cells {
            let kk = if topk { Some(*k) } else { None };
            let jobs = s
                .seeds
                .iter()
                .map(|&seed| {
                    let mut ts = ts.clone();
                    ts.seed = seed;
                    let cfg = ts.config()?;
                    Ok((seed, ts, cfg))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            // seeds train concurrently; results are written in seed order
            let hash = run.hash().to_string();
            let fitted = jobs
                .par_iter()
                .map(|(_, ts, cfg)| fit_model(&hash, ts, cfg, &data, features.as_ref()))
                .collect::<Result<Vec<_>, CliError>>()?;
            let mut models = Vec::new();
            for ((seed, _, cfg), f) in jobs.iter().zip(fitted) {
                let prefix = match kk {
                    Some(k) => format!("m{m}_k{k}_seed{seed}_"),
                    None => format!("m{m}_seed{seed}_"),
                };
                save_model(run, &prefix, cfg, &f)?;
                let sum = &f.summary;
                runs.push(vec![
                    (*m).into(),
                    kk.into(),
                    (*seed).into(),
                    format!("{prefix}sae.saec").into(),
                    sum.final_loss.into(),
                    sum.fvu.into(),
                    sum.mean_l0.into(),
                    sum.dead_latents.into(),
                    sum.recovery_mmcs.into(),
                ]);
                models.push(f.params);
            }
            if models.len() < 2 {
                continue;
            }
            let n = models.len();
            let e = pairwise_matchings(SeedEnsemble::new(models, crit)?)?;
            let pairs = e.pairs().count() as f64;
            let mean = |f: fn(&saeoverlap::align::AlignSummary) -> f64| {
                e.pairs().map(|(_, a)| f(&a.summary)).sum::<f64>() / pairs
            };
            let c = only_in_base_curve(&e)?;
            cell_table.push(vec![
                (*m).into(),
                kk.into(),
                n.into(),
                mean(|s| s.shared_fraction).into(),
                mean(|s| s.mean_cos_enc).into(),
                mean(|s| s.mean_cos_dec).into(),
                c.last().map(|x| x.1).into(),
            ]);
            for (size, f) in c {
                curve.push(vec![(*m).into(), kk.into(), size.into(), f.into()]);
            }
        }
        run.table("runs.csv", &runs)?;
        run.table("cells.csv", &cell_table)?;
        run.table("only_in_base.csv", &curve)?;
        Ok(())
    })
}
