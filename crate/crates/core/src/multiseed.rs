//! Analyses over an ensemble of SAEs that differ only in their seed.

use std::collections::BTreeMap;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{align_pair_with, AlignOptions, Alignment, MatchRecord, SharedCriterion};
use crate::error::{Error, Result};
use crate::sae::{FiringStats, SaeParams};

#[derive(Clone, Debug)]
pub struct SeedEnsemble {
    saes: Vec<SaeParams>,
    pub crit: SharedCriterion,
    pub opts: AlignOptions,
    /// Keyed by `(i, j)` with `i < j`; records are from `i`'s side.
    pair_results: BTreeMap<(usize, usize), Alignment>,
}

impl SeedEnsemble {
    pub fn new(saes: Vec<SaeParams>, crit: SharedCriterion) -> Result<Self> {
        Self::with_options(saes, crit, AlignOptions::default())
    }

    pub fn with_options(saes: Vec<SaeParams>, crit: SharedCriterion, opts: AlignOptions) -> Result<Self> {
        crit.validate()?;
        if saes.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 SAEs, got {}", saes.len())));
        }
        let (m, d, arch) = (saes[0].m(), saes[0].d(), saes[0].arch);
        for (i, s) in saes.iter().enumerate().skip(1) {
            if s.m() != m || s.d() != d || s.arch != arch {
                return Err(Error::shape(
                    "ensemble",
                    format!("{arch} {m} x {d}"),
                    format!("SAE {i}: {} {} x {}", s.arch, s.m(), s.d()),
                ));
            }
        }
        Ok(Self { saes, crit, opts, pair_results: BTreeMap::new() })
    }

    pub fn len(&self) -> usize {
        self.saes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.saes.is_empty()
    }

    pub fn m(&self) -> usize {
        self.saes[0].m()
    }

    pub fn saes(&self) -> &[SaeParams] {
        &self.saes
    }

    pub fn is_populated(&self) -> bool {
        self.pair_results.len() == self.len() * (self.len() - 1) / 2
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(usize, usize), &Alignment)> {
        self.pair_results.iter()
    }

    /// The alignment of `i` against `j`, seen from `i`. Requires
    /// [`pairwise_matchings`] to have run.
    pub fn view(&self, i: usize, j: usize) -> Result<Alignment> {
        let n = self.len();
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidArgument(format!("no pair ({i}, {j}) among {n} SAEs")));
        }
        let key = (i.min(j), i.max(j));
        let al = self
            .pair_results
            .get(&key)
            .ok_or_else(|| Error::InvalidArgument("pairwise matchings not computed".into()))?;
        Ok(if i < j { al.clone() } else { al.reversed() })
    }

    fn mask(&self, base: usize, other: usize) -> Vec<bool> {
        self.view(base, other).expect("populated ensemble").shared_mask()
    }

    fn check_ready(&self) -> Result<()> {
        if self.is_populated() {
            Ok(())
        } else {
            Err(Error::InvalidArgument("pairwise matchings not computed".into()))
        }
    }
}

/// Aligns every unordered pair; pairs run in parallel.
pub fn pairwise_matchings(mut ensemble: SeedEnsemble) -> Result<SeedEnsemble> {
    let n = ensemble.len();
    let keys: Vec<(usize, usize)> = (0..n).tuple_combinations().collect();
    let results: Vec<Result<Alignment>> = keys
        .par_iter()
        .map(|&(i, j)| align_pair_with(&ensemble.saes[i], &ensemble.saes[j], &ensemble.crit, &ensemble.opts))
        .collect();
    ensemble.pair_results.clear();
    for (k, r) in keys.into_iter().zip(results) {
        ensemble.pair_results.insert(k, r?);
    }
    Ok(ensemble)
}

/// Fraction of `base`'s latents that are shared with none of `others`.
pub fn only_in_base_fraction(ensemble: &SeedEnsemble, base: usize, others: &[usize]) -> Result<f64> {
    ensemble.check_ready()?;
    let mut orphan = vec![true; ensemble.m()];
    for &o in others {
        let mask = ensemble.view(base, o)?.shared_mask();
        orphan.iter_mut().zip(mask).for_each(|(a, s)| *a &= !s);
    }
    Ok(orphan.iter().filter(|&&o| o).count() as f64 / ensemble.m() as f64)
}

/// For each subset size `k = 2..=N`: the only-in-base fraction averaged over
/// every `k`-subset of seeds and every choice of base within it.
pub fn only_in_base_curve(ensemble: &SeedEnsemble) -> Result<Vec<(usize, f64)>> {
    ensemble.check_ready()?;
    let n = ensemble.len();
    let m = ensemble.m();
    // masks[b][o] = shared mask of b against o
    let masks: Vec<Vec<Option<Vec<bool>>>> =
        (0..n).map(|b| (0..n).map(|o| (b != o).then(|| ensemble.mask(b, o))).collect()).collect();
    let mut curve = Vec::with_capacity(n - 1);
    let mut orphan = vec![true; m];
    for k in 2..=n {
        let (mut sum, mut runs) = (0u64, 0u64);
        for subset in (0..n).combinations(k) {
            for &base in &subset {
                orphan.fill(true);
                for &o in subset.iter().filter(|&&o| o != base) {
                    let mask = masks[base][o].as_ref().expect("distinct");
                    orphan.iter_mut().zip(mask).for_each(|(a, &s)| *a &= !s);
                }
                sum += orphan.iter().filter(|&&o| o).count() as u64;
                runs += 1;
            }
        }
        curve.push((k, sum as f64 / (runs as f64 * m as f64)));
    }
    Ok(curve)
}

/// Number of other seeds each latent of `base` is shared with.
pub fn shared_count_per_latent(ensemble: &SeedEnsemble, base: usize) -> Result<Vec<usize>> {
    ensemble.check_ready()?;
    if base >= ensemble.len() {
        return Err(Error::InvalidArgument(format!("base {base} out of range for {} SAEs", ensemble.len())));
    }
    let mut counts = vec![0; ensemble.m()];
    for o in (0..ensemble.len()).filter(|&o| o != base) {
        for (c, s) in counts.iter_mut().zip(ensemble.mask(base, o)) {
            *c += s as usize;
        }
    }
    Ok(counts)
}

/// Mean over the other seeds of each base latent's matched cosine, per side.
pub fn mean_matched_cosine_per_latent(ensemble: &SeedEnsemble, base: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    ensemble.check_ready()?;
    let m = ensemble.m();
    let (mut enc, mut dec) = (vec![0.0; m], vec![0.0; m]);
    let others: Vec<usize> = (0..ensemble.len()).filter(|&o| o != base).collect();
    for &o in &others {
        for r in ensemble.view(base, o)?.records {
            enc[r.latent] += r.cos_enc;
            dec[r.latent] += r.cos_dec;
        }
    }
    let k = others.len() as f64;
    enc.iter_mut().chain(dec.iter_mut()).for_each(|x| *x /= k);
    Ok((enc, dec))
}

/// Firing-count bin edges: a roughly logarithmic axis up to 500, then
/// linear steps of 250 up to 4000. The last bin is `[4000, inf)`.
pub fn firing_bin_edges() -> Vec<f64> {
    let mut edges = vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0];
    edges.extend((3..=16).map(|i| 250.0 * i as f64));
    edges.push(f64::INFINITY);
    edges
}

/// Index of the half-open bin `[edges[i], edges[i+1])` containing `x`.
fn bin_of(edges: &[f64], x: f64) -> Option<usize> {
    if x < edges[0] || x >= edges[edges.len() - 1] {
        return None;
    }
    Some(edges.partition_point(|&e| e <= x) - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencySharing {
    pub edges: Vec<f64>,
    /// `histogram[s][b]`: latents shared with `s` other seeds whose firing
    /// count falls in bin `b`.
    pub histogram: Vec<Vec<usize>>,
    /// Firing counts grouped by shared count, in latent order.
    pub firing_by_count: Vec<Vec<u64>>,
}

pub fn frequency_vs_sharing_table(stats: &FiringStats, counts: &[usize]) -> Result<FrequencySharing> {
    if stats.counts.len() != counts.len() {
        return Err(Error::shape("frequency_vs_sharing_table", stats.counts.len(), counts.len()));
    }
    let edges = firing_bin_edges();
    let stacks = counts.iter().max().map_or(0, |&c| c + 1);
    let mut histogram = vec![vec![0; edges.len() - 1]; stacks];
    let mut firing_by_count = vec![Vec::new(); stacks];
    for (&f, &s) in stats.counts.iter().zip(counts) {
        let b = bin_of(&edges, f as f64).expect("edges cover [0, inf)");
        histogram[s][b] += 1;
        firing_by_count[s].push(f);
    }
    Ok(FrequencySharing { edges, histogram, firing_by_count })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub residual_ss: f64,
    pub with_offset: bool,
}

impl PowerLawFit {
    pub fn predict(&self, k: f64) -> f64 {
        self.a * k.powf(-self.b) + self.c
    }
}

pub const EXPONENT_RANGE: (f64, f64) = (0.1, 4.0);
const GRID: usize = 400;
const STARTS: usize = 8;

struct Profile<'a> {
    ks: &'a [f64],
    ys: &'a [f64],
    c_max: Option<f64>,
}

impl Profile<'_> {
    /// Best `(a, c, rss)` for a fixed exponent.
    fn solve(&self, b: f64) -> (f64, f64, f64) {
        let xs: Vec<f64> = self.ks.iter().map(|k| k.powf(-b)).collect();
        let a_for = |c: f64| {
            let num: f64 = xs.iter().zip(self.ys).map(|(x, y)| x * (y - c)).sum();
            let den: f64 = xs.iter().map(|x| x * x).sum();
            num / den
        };
        let (a, c) = match self.c_max {
            None => (a_for(0.0), 0.0),
            Some(c_max) => {
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = self.ys.iter().sum::<f64>() / n;
                let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
                let sxy: f64 = xs.iter().zip(self.ys).map(|(x, y)| (x - mx) * (y - my)).sum();
                let c = if sxx > 0.0 { my - (sxy / sxx) * mx } else { my };
                // the profile in c is convex, so clamping gives the bounded optimum
                let c = c.clamp(0.0, c_max);
                (a_for(c), c)
            }
        };
        let rss = xs
            .iter()
            .zip(self.ys)
            .map(|(x, y)| {
                let r = a * x + c - y;
                r * r
            })
            .sum();
        (a, c, rss)
    }

    fn golden(&self, mut lo: f64, mut hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - g * (hi - lo);
        let mut x2 = lo + g * (hi - lo);
        let (mut f1, mut f2) = (self.solve(x1).2, self.solve(x2).2);
        for _ in 0..200 {
            if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                break;
            }
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = self.solve(x1).2;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = self.solve(x2).2;
            }
        }
        if f1 <= f2 {
            x1
        } else {
            x2
        }
    }

    fn fit(&self) -> (f64, f64, f64, f64) {
        let (lo, hi) = EXPONENT_RANGE;
        let grid: Vec<f64> =
            (0..GRID).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (GRID - 1) as f64).exp()).collect();
        let rss: Vec<f64> = grid.iter().map(|&b| self.solve(b).2).collect();
        let mut starts: Vec<usize> = (0..GRID)
            .filter(|&i| (i == 0 || rss[i] <= rss[i - 1]) && (i + 1 == GRID || rss[i] <= rss[i + 1]))
            .collect();
        starts.sort_by(|&i, &j| rss[i].total_cmp(&rss[j]).then(i.cmp(&j)));
        starts.truncate(STARTS);

        let mut best: Option<(f64, f64, f64, f64)> = None;
        for i in starts {
            let b = self.golden(grid[i.saturating_sub(1)], grid[(i + 1).min(GRID - 1)]);
            let (a, c, r) = self.solve(b);
            let (a, b, c, r) = if r <= rss[i] {
                (a, b, c, r)
            } else {
                let (a, c, r) = self.solve(grid[i]);
                (a, grid[i], c, r)
            };
            if best.is_none_or(|x| r < x.3) {
                best = Some((a, b, c, r));
            }
        }
        best.expect("grid has a local minimum")
    }
}

/// Least-squares fit of `y = a * k^(-b) + c` with `b` in
/// [`EXPONENT_RANGE`] and, when `with_offset`, `c` in `[0, max(0, min y)]`.
///
/// For fixed `b` the model is linear in `(a, c)`, so only the exponent is
/// searched: a log-spaced grid, golden-section refinement from the best
/// local minima, then the linear parameters in closed form.
pub fn fit_power_law(ks: &[f64], ys: &[f64], with_offset: bool) -> Result<PowerLawFit> {
    if ks.len() != ys.len() {
        return Err(Error::shape("fit_power_law", ks.len(), ys.len()));
    }
    let need = if with_offset { 4 } else { 3 };
    if ks.len() < need {
        return Err(Error::InvalidArgument(format!("need at least {need} points, got {}", ks.len())));
    }
    if ks.iter().chain(ys).any(|v| !v.is_finite()) || ks.iter().any(|&k| k <= 0.0) {
        return Err(Error::InvalidArgument("ks must be positive and all values finite".into()));
    }
    if ks.iter().all(|&k| k == ks[0]) {
        return Err(Error::InvalidArgument("all ks equal".into()));
    }
    let min_y = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let plain = Profile { ks, ys, c_max: None }.fit();
    let (a, b, c, r) = if with_offset {
        let off = Profile { ks, ys, c_max: Some(min_y.max(0.0)) }.fit();
        // c = 0 is feasible for the offset model, so it can never do worse
        if off.3 <= plain.3 {
            off
        } else {
            plain
        }
    } else {
        plain
    };
    Ok(PowerLawFit { a, b, c, residual_ss: r, with_offset })
}

/// Which cosine places a matched pair on the alignment axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentKey {
    /// Mean of the encoder and decoder cosines; the pair uses the decoder
    /// counterpart.
    #[default]
    Mean,
    Enc,
    Dec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub latent_a: usize,
    pub latent_b: usize,
    pub alignment: f64,
    pub score_a: f64,
    pub score_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBin {
    pub lo: f64,
    pub hi: f64,
    pub pairs: Vec<ScorePair>,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    /// Above the threshold: the pair with the largest `min(score_a,
    /// score_b)`. Below: the largest `score_a - score_b`. The bin midpoint
    /// decides which side a bin is on.
    pub example: Option<ScorePair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreAlignment {
    pub bins: Vec<ScoreBin>,
    /// Pairs with a missing score on either side.
    pub unscored: usize,
    /// Pairs whose alignment lies outside every bin.
    pub out_of_range: usize,
}

/// Bins `[e_i, e_{i+1})`; the last bin also includes its upper edge.
pub fn score_alignment_table(
    scores_a: &[Option<f64>],
    scores_b: &[Option<f64>],
    records: &[MatchRecord],
    edges: &[f64],
    tau: f64,
    key: AlignmentKey,
) -> Result<ScoreAlignment> {
    let m = records.len();
    if scores_a.len() != m || scores_b.len() != m {
        return Err(Error::shape("score_alignment_table", m, format!("{} / {}", scores_a.len(), scores_b.len())));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("bin edges must be strictly increasing, at least 2".into()));
    }
    for (i, s) in scores_a.iter().chain(scores_b).enumerate() {
        if let Some(v) = *s {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("score {v} of latent {} outside [0, 1]", i % m)));
            }
        }
    }

    let mut bins: Vec<ScoreBin> = edges
        .windows(2)
        .map(|w| ScoreBin { lo: w[0], hi: w[1], pairs: Vec::new(), mean_a: None, mean_b: None, example: None })
        .collect();
    let (mut unscored, mut out_of_range) = (0, 0);
    let last = *edges.last().unwrap();
    for r in records {
        let (alignment, partner) = match key {
            AlignmentKey::Mean => (r.alignment(), r.dec_counterpart),
            AlignmentKey::Enc => (r.cos_enc, r.enc_counterpart),
            AlignmentKey::Dec => (r.cos_dec, r.dec_counterpart),
        };
        let (Some(score_a), Some(score_b)) = (scores_a[r.latent], scores_b[partner]) else {
            unscored += 1;
            continue;
        };
        let bin = if alignment == last { Some(bins.len() - 1) } else { bin_of(edges, alignment) };
        let Some(bin) = bin else {
            out_of_range += 1;
            continue;
        };
        bins[bin].pairs.push(ScorePair { latent_a: r.latent, latent_b: partner, alignment, score_a, score_b });
    }

    for bin in &mut bins {
        if bin.pairs.is_empty() {
            continue;
        }
        let n = bin.pairs.len() as f64;
        bin.mean_a = Some(bin.pairs.iter().map(|p| p.score_a).sum::<f64>() / n);
        bin.mean_b = Some(bin.pairs.iter().map(|p| p.score_b).sum::<f64>() / n);
        let above = 0.5 * (bin.lo + bin.hi.min(1.0)) >= tau;
        let merit = |p: &ScorePair| if above { p.score_a.min(p.score_b) } else { p.score_a - p.score_b };
        let mut best = bin.pairs[0];
        for p in &bin.pairs[1..] {
            if merit(p) > merit(&best) {
                best = *p;
            }
        }
        bin.example = Some(best);
    }
    Ok(ScoreAlignment { bins, unscored, out_of_range })
}

/// `n` equal-width bins covering `[lo, hi]`.
pub fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}
