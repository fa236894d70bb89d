//! `align`, `overlap`, `freq`, `fit-powerlaw`, `scores` and `report`.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use saeoverlap::align::{
    align_pair_with, default_taus, matched_vs_max_report, threshold_sweep, AlignOptions, MatchMode, MatchRecord,
    Precision, SharedCriterion, Side,
};
use saeoverlap::io::{
    load_scores, match_table, parse_table, read_activations, read_checkpoint, read_match_table, Table,
};
use saeoverlap::multiseed::{
    fit_power_law, frequency_vs_sharing_table, mean_matched_cosine_per_latent, only_in_base_curve, pairwise_matchings,
    score_alignment_table, shared_count_per_latent, uniform_edges, AlignmentKey, SeedEnsemble,
};
use saeoverlap::sae::{firing_counts, SaeParams};

use crate::config::resolve;
use crate::run::{Run, MANIFEST};
use crate::{required, with_run, CliError};

/// Matching flags shared by every command that aligns SAEs.
#[derive(Args, Clone, Serialize)]
pub struct MatchArgs {
    /// Cosine threshold for a shared latent.
    #[arg(long)]
    tau: Option<f64>,
    /// Require the encoder and decoder matchings to pick the same counterpart.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    require_same_counterpart: Option<bool>,
    /// independent or combined.
    #[arg(long)]
    mode: Option<String>,
    /// f64 or f32 cosine matrices.
    #[arg(long)]
    precision: Option<String>,
    /// Tile size for the cosine computation.
    #[arg(long)]
    block: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchSettings {
    tau: f64,
    require_same_counterpart: bool,
    mode: MatchMode,
    precision: Precision,
    block: usize,
}

impl Default for MatchSettings {
    fn default() -> Self {
        let c = SharedCriterion::default();
        let o = AlignOptions::default();
        Self {
            tau: c.tau,
            require_same_counterpart: c.require_same_counterpart,
            mode: o.mode,
            precision: o.precision,
            block: o.block,
        }
    }
}

impl MatchSettings {
    fn criterion(&self) -> Result<SharedCriterion, CliError> {
        Ok(SharedCriterion::new(self.tau, self.require_same_counterpart)?)
    }

    fn options(&self) -> AlignOptions {
        AlignOptions { mode: self.mode, precision: self.precision, block: self.block }
    }
}

fn load_sae(run: &mut Run, path: &Path) -> Result<(SaeParams, u64), CliError> {
    run.input(path);
    let ck = read_checkpoint(path)?;
    for w in ck.warnings {
        run.warn(format!("{}: {w}", path.display()));
    }
    run.manifest.seeds.push(ck.config.seed);
    Ok((ck.params, ck.config.seed))
}

#[derive(Args, Serialize)]
pub struct AlignArgs {
    /// First checkpoint; records are indexed by its latents.
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of evenly spaced thresholds in the sweep table.
    #[arg(long)]
    sweep_points: Option<usize>,
    #[command(flatten)]
    matching: MatchArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AlignSettings {
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    out: Option<PathBuf>,
    sweep_points: usize,
    matching: MatchSettings,
}

impl Default for AlignSettings {
    fn default() -> Self {
        Self { a: None, b: None, out: None, sweep_points: 101, matching: MatchSettings::default() }
    }
}

pub fn align(args: AlignArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let s: AlignSettings = resolve("align", cfg, &args)?;
    let crit = s.matching.criterion()?;
    let (pa, pb) = (required(&s.a, "a")?, required(&s.b, "b")?);
    with_run("align", s.out.as_deref(), &s, |run| {
        let (a, _) = load_sae(run, &pa)?;
        let (b, _) = load_sae(run, &pb)?;
        let al = align_pair_with(&a, &b, &crit, &s.matching.options())?;
        run.table("matches.csv", &match_table(&al.records, run.hash()))?;
        run.json("summary.json", &al.summary)?;

        let mut sweep =
            Table::new("threshold sweep", &["tau", "shared_fraction"], "cosine; fraction of latents", run.hash());
        for (tau, f) in threshold_sweep(&al.records, &default_taus(s.sweep_points), crit.require_same_counterpart) {
            sweep.push(vec![tau.into(), f.into()]);
        }
        run.table("threshold_sweep.csv", &sweep)?;

        let rep = matched_vs_max_report(&al.records);
        let mut mvm = Table::new(
            format!(
                "matched vs max cosine (exceed fraction enc {} dec {})",
                rep.exceed_fraction_enc, rep.exceed_fraction_dec
            ),
            &["latent", "side", "matched", "max"],
            "cosine similarity",
            run.hash(),
        );
        for r in &rep.rows {
            let side = match r.side {
                Side::Enc => "enc",
                Side::Dec => "dec",
            };
            mvm.push(vec![r.latent.into(), side.into(), r.matched.into(), r.max.into()]);
        }
        run.table("matched_vs_max.csv", &mvm)?;
        println!(
            "shared fraction {:.4}  mean cos enc {:.4} dec {:.4}",
            al.summary.shared_fraction, al.summary.mean_cos_enc, al.summary.mean_cos_dec
        );
        Ok(())
    })
}

#[derive(Args, Serialize)]
pub struct OverlapArgs {
    /// Checkpoints of the ensemble, comma-separated or repeated.
    #[arg(long = "ckpt", value_delimiter = ',')]
    checkpoints: Option<Vec<PathBuf>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    matching: MatchArgs,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OverlapSettings {
    checkpoints: Vec<PathBuf>,
    out: Option<PathBuf>,
    matching: MatchSettings,
}

fn ensemble(run: &mut Run, paths: &[PathBuf], m: &MatchSettings) -> Result<SeedEnsemble, CliError> {
    if paths.len() < 2 {
        return Err(CliError::Usage("need at least two checkpoints".into()));
    }
    let mut saes = Vec::with_capacity(paths.len());
    for p in paths {
        saes.push(load_sae(run, p)?.0);
    }
    let e = SeedEnsemble::with_options(saes, m.criterion()?, m.options())?;
    Ok(pairwise_matchings(e)?)
}

pub fn overlap(args: OverlapArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let s: OverlapSettings = resolve("overlap", cfg, &args)?;
    with_run("overlap", s.out.as_deref(), &s, |run| {
        let e = ensemble(run, &s.checkpoints, &s.matching)?;
        let mut pairs = Table::new(
            "pairwise alignment",
            &[
                "i",
                "j",
                "shared_fraction",
                "agree_fraction",
                "mean_cos_enc",
                "mean_cos_dec",
                "mean_max_cos_enc",
                "mean_max_cos_dec",
            ],
            "indices into the checkpoint list; fractions of latents; cosine similarity",
            run.hash(),
        );
        for (&(i, j), al) in e.pairs() {
            let x = &al.summary;
            pairs.push(vec![
                i.into(),
                j.into(),
                x.shared_fraction.into(),
                x.agree_fraction.into(),
                x.mean_cos_enc.into(),
                x.mean_cos_dec.into(),
                x.mean_max_cos_enc.into(),
                x.mean_max_cos_dec.into(),
            ]);
        }
        run.table("pairs.csv", &pairs)?;

        let mut curve = Table::new(
            "only-in-base curve",
            &["subset_size", "only_in_base_fraction"],
            "number of seeds; fraction of base latents",
            run.hash(),
        );
        for (k, f) in only_in_base_curve(&e)? {
            curve.push(vec![k.into(), f.into()]);
        }
        run.table("only_in_base.csv", &curve)?;

        let mut counts = Table::new(
            "shared count per latent",
            &["base", "latent", "shared_count"],
            "number of other seeds sharing the latent",
            run.hash(),
        );
        for base in 0..e.len() {
            for (l, c) in shared_count_per_latent(&e, base)?.into_iter().enumerate() {
                counts.push(vec![base.into(), l.into(), c.into()]);
            }
        }
        run.table("shared_counts.csv", &counts)?;
        Ok(())
    })
}

#[derive(Args, Serialize)]
pub struct FreqArgs {
    #[arg(long = "ckpt", value_delimiter = ',')]
    checkpoints: Option<Vec<PathBuf>>,
    /// Activations to count firings on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Index of the base SAE in the checkpoint list.
    #[arg(long)]
    base: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    matching: MatchArgs,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FreqSettings {
    checkpoints: Vec<PathBuf>,
    data: Option<PathBuf>,
    base: usize,
    out: Option<PathBuf>,
    matching: MatchSettings,
}

pub fn freq(args: FreqArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let s: FreqSettings = resolve("freq", cfg, &args)?;
    let data_path = required(&s.data, "data")?;
    if s.base >= s.checkpoints.len() {
        return Err(CliError::Usage(format!("base {} out of range for {} checkpoints", s.base, s.checkpoints.len())));
    }
    with_run("freq", s.out.as_deref(), &s, |run| {
        let e = ensemble(run, &s.checkpoints, &s.matching)?;
        run.input(&data_path);
        let data = read_activations(&data_path)?;
        let stats = firing_counts(&e.saes()[s.base], &data)?;
        let counts = shared_count_per_latent(&e, s.base)?;
        let (enc, dec) = mean_matched_cosine_per_latent(&e, s.base)?;

        let mut latents = Table::new(
            "base latents",
            &["latent", "firing_count", "firing_frequency", "shared_count", "mean_cos_enc", "mean_cos_dec"],
            "samples with activation > 0; fraction of samples; other seeds; cosine similarity",
            run.hash(),
        );
        for (l, f) in stats.frequencies().into_iter().enumerate() {
            latents.push(vec![
                l.into(),
                stats.counts[l].into(),
                f.into(),
                counts[l].into(),
                enc[l].into(),
                dec[l].into(),
            ]);
        }
        run.table("freq_latents.csv", &latents)?;

        let h = frequency_vs_sharing_table(&stats, &counts)?;
        let mut hist = Table::new(
            "firing count histogram by shared count",
            &["bin_lo", "bin_hi", "shared_count", "latents"],
            "firing count bin [lo, hi); number of latents",
            run.hash(),
        );
        for (sc, row) in h.histogram.iter().enumerate() {
            for (b, &n) in row.iter().enumerate() {
                hist.push(vec![h.edges[b].into(), h.edges[b + 1].into(), sc.into(), n.into()]);
            }
        }
        run.table("freq_hist.csv", &hist)?;
        Ok(())
    })
}

#[derive(Args, Serialize)]
pub struct FitArgs {
    /// Table with the curve, e.g. `only_in_base.csv` from `overlap`.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    x_column: Option<String>,
    #[arg(long)]
    y_column: Option<String>,
    /// Keep only rows with `column=value`; repeatable.
    #[arg(long = "where")]
    filters: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitSettings {
    curve: Option<PathBuf>,
    out: Option<PathBuf>,
    x_column: String,
    y_column: String,
    filters: Vec<String>,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            curve: None,
            out: None,
            x_column: "subset_size".into(),
            y_column: "only_in_base_fraction".into(),
            filters: Vec::new(),
        }
    }
}

fn column(header: &[String], name: &str) -> Result<usize, CliError> {
    header.iter().position(|h| h == name).ok_or_else(|| CliError::Usage(format!("no column {name:?} in {header:?}")))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Core(saeoverlap::Error::Io { path: path.to_path_buf(), source: e }))
}

pub fn fit_powerlaw(args: FitArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let s: FitSettings = resolve("fit-powerlaw", cfg, &args)?;
    let path = required(&s.curve, "curve")?;
    with_run("fit-powerlaw", s.out.as_deref(), &s, |run| {
        run.input(&path);
        let (header, rows) = parse_table(&read_text(&path)?)?;
        let (xi, yi) = (column(&header, &s.x_column)?, column(&header, &s.y_column)?);
        let mut filters = Vec::new();
        for f in &s.filters {
            let (c, v) =
                f.split_once('=').ok_or_else(|| CliError::Usage(format!("filter {f:?} is not column=value")))?;
            filters.push((column(&header, c)?, v.to_string()));
        }
        let (mut ks, mut ys) = (Vec::new(), Vec::new());
        for (n, row) in rows.iter().enumerate() {
            if filters.iter().any(|(c, v)| &row[*c] != v) {
                continue;
            }
            let num = |i: usize| {
                row[i].parse::<f64>().map_err(|_| {
                    CliError::Core(
                        saeoverlap::FormatError::Line { line: n + 3, message: format!("not a number: {:?}", row[i]) }
                            .into(),
                    )
                })
            };
            ks.push(num(xi)?);
            ys.push(num(yi)?);
        }
        let with = fit_power_law(&ks, &ys, true)?;
        let without = fit_power_law(&ks, &ys, false)?;

        let mut fit = Table::new(
            "power law fits, y = a k^-b + c",
            &["model", "a", "b", "c", "residual_ss"],
            "dimensionless",
            run.hash(),
        );
        for (name, f) in [("with_offset", &with), ("without_offset", &without)] {
            fit.push(vec![name.into(), f.a.into(), f.b.into(), f.c.into(), f.residual_ss.into()]);
        }
        run.table("fit.csv", &fit)?;

        let mut curve = Table::new(
            "observed and fitted curve",
            &[s.x_column.as_str(), "observed", "with_offset", "without_offset"],
            "same as input",
            run.hash(),
        );
        for (&k, &y) in ks.iter().zip(&ys) {
            curve.push(vec![k.into(), y.into(), with.predict(k).into(), without.predict(k).into()]);
        }
        run.table("fit_curve.csv", &curve)?;
        println!(
            "with offset: a={:.6} b={:.6} c={:.6} rss={:.3e}; without: a={:.6} b={:.6} rss={:.3e}",
            with.a, with.b, with.c, with.residual_ss, without.a, without.b, without.residual_ss
        );
        Ok(())
    })
}

#[derive(Args, Serialize)]
pub struct ScoresArgs {
    /// Match table from `align`; alternatively give both checkpoints.
    #[arg(long)]
    matches: Option<PathBuf>,
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    #[arg(long)]
    scores_a: Option<PathBuf>,
    #[arg(long)]
    scores_b: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of equal-width alignment bins between bin_lo and bin_hi.
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    bin_lo: Option<f64>,
    #[arg(long)]
    bin_hi: Option<f64>,
    /// mean, enc or dec.
    #[arg(long)]
    key: Option<String>,
    #[command(flatten)]
    matching: MatchArgs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScoresSettings {
    matches: Option<PathBuf>,
    a: Option<PathBuf>,
    b: Option<PathBuf>,
    scores_a: Option<PathBuf>,
    scores_b: Option<PathBuf>,
    out: Option<PathBuf>,
    bins: usize,
    bin_lo: f64,
    bin_hi: f64,
    key: AlignmentKey,
    matching: MatchSettings,
}

impl Default for ScoresSettings {
    fn default() -> Self {
        Self {
            matches: None,
            a: None,
            b: None,
            scores_a: None,
            scores_b: None,
            out: None,
            bins: 10,
            bin_lo: 0.0,
            bin_hi: 1.0,
            key: AlignmentKey::Mean,
            matching: MatchSettings::default(),
        }
    }
}

pub fn scores(args: ScoresArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let s: ScoresSettings = resolve("scores", cfg, &args)?;
    let (sa, sb) = (required(&s.scores_a, "scores_a")?, required(&s.scores_b, "scores_b")?);
    if s.bins == 0 || !(s.bin_lo < s.bin_hi) {
        return Err(CliError::Usage("need bins >= 1 and bin_lo < bin_hi".into()));
    }
    let crit = s.matching.criterion()?;
    with_run("scores", s.out.as_deref(), &s, |run| {
        let records: Vec<MatchRecord> = match (&s.matches, &s.a, &s.b) {
            (Some(m), _, _) => {
                run.input(m);
                read_match_table(m)?
            }
            (None, Some(a), Some(b)) => {
                let (a, _) = load_sae(run, a)?;
                let (b, _) = load_sae(run, b)?;
                align_pair_with(&a, &b, &crit, &s.matching.options())?.records
            }
            _ => return Err(CliError::Usage("give either matches or both a and b".into())),
        };
        run.input(&sa);
        run.input(&sb);
        let m = records.len();
        let scores_a = load_scores(&sa, m)?;
        let scores_b = load_scores(&sb, m)?;
        let edges = uniform_edges(s.bin_lo, s.bin_hi, s.bins);
        let t = score_alignment_table(&scores_a, &scores_b, &records, &edges, crit.tau, s.key)?;
        if t.unscored > 0 {
            run.warn(format!("{} matched pairs lack a score on one side", t.unscored));
        }

        let units = "alignment bin [lo, hi); scores in [0, 1]";
        let mut bins = Table::new(
            "scores by alignment",
            &["bin_lo", "bin_hi", "pairs", "mean_score_a", "mean_score_b"],
            units,
            run.hash(),
        );
        let cols = ["bin_lo", "bin_hi", "latent_a", "latent_b", "alignment", "score_a", "score_b"];
        let mut pairs = Table::new("scored pairs", &cols, units, run.hash());
        let mut examples = Table::new(format!("example pair per bin (tau {})", crit.tau), &cols, units, run.hash());
        for b in &t.bins {
            bins.push(vec![b.lo.into(), b.hi.into(), b.pairs.len().into(), b.mean_a.into(), b.mean_b.into()]);
            let row = |p: &saeoverlap::multiseed::ScorePair| {
                vec![
                    b.lo.into(),
                    b.hi.into(),
                    p.latent_a.into(),
                    p.latent_b.into(),
                    p.alignment.into(),
                    p.score_a.into(),
                    p.score_b.into(),
                ]
            };
            for p in &b.pairs {
                pairs.push(row(p));
            }
            if let Some(p) = &b.example {
                examples.push(row(p));
            }
        }
        run.table("score_bins.csv", &bins)?;
        run.table("score_pairs.csv", &pairs)?;
        run.table("score_examples.csv", &examples)?;
        Ok(())
    })
}

#[derive(Args, Serialize)]
pub struct ReportArgs {
    /// Directory searched recursively for run manifests.
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReportSettings {
    root: Option<PathBuf>,
    out: Option<PathBuf>,
}

pub fn report(args: ReportArgs, cfg: Option<&Path>) -> Result<(), CliError> {
    let s: ReportSettings = resolve("report", cfg, &args)?;
    let root = required(&s.root, "root")?;
    if !root.is_dir() {
        return Err(CliError::Core(saeoverlap::Error::Io {
            path: root,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        }));
    }
    let out = s.out.clone();
    with_run("report", out.as_deref(), &s, |run| {
        let own = std::fs::canonicalize(&run.out).ok();
        let mut manifests: Vec<PathBuf> = walkdir::WalkDir::new(&root)
            .sort_by_file_name()
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name() == MANIFEST)
            .map(|e| e.into_path())
            .filter(|p| p.parent().and_then(|d| std::fs::canonicalize(d).ok()) != own)
            .collect();
        manifests.sort();

        let mut runs = Table::new(
            "runs",
            &["run_dir", "command", "status", "config_hash", "outputs"],
            "paths relative to the report root",
            run.hash(),
        );
        let mut metrics =
            Table::new("run metrics", &["run_dir", "source", "metric", "value"], "as reported by each run", run.hash());
        for m in &manifests {
            run.input(m);
            let dir = m.parent().expect("manifest has a parent");
            let rel = dir.strip_prefix(&root).unwrap_or(dir).display().to_string();
            let v: Value = serde_json::from_str(&read_text(m)?)
                .map_err(|e| CliError::Core(saeoverlap::FormatError::Layout(format!("{}: {e}", m.display())).into()))?;
            let field = |k: &str| v.get(k).and_then(Value::as_str).unwrap_or("").to_string();
            let outputs = v.get("outputs").and_then(Value::as_array).map_or(0, Vec::len);
            runs.push(vec![
                rel.clone().into(),
                field("command").into(),
                field("status").into(),
                field("config_hash").into(),
                outputs.into(),
            ]);

            let mut summaries: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| saeoverlap::Error::Io { path: dir.to_path_buf(), source: e })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("summary.json")))
                .collect();
            summaries.sort();
            for p in summaries {
                let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(&read_text(&p)?) else {
                    run.warn(format!("{}: not a JSON object", p.display()));
                    continue;
                };
                let name = p.file_name().unwrap().to_string_lossy().to_string();
                for (k, val) in &obj {
                    if let Some(x) = val.as_f64() {
                        metrics.push(vec![rel.clone().into(), name.clone().into(), k.clone().into(), x.into()]);
                    }
                }
            }
        }
        run.table("runs.csv", &runs)?;
        run.table("metrics.csv", &metrics)?;
        println!("{} runs", manifests.len());
        Ok(())
    })
}
