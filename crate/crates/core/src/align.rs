//! Latent-by-latent alignment of two SAEs trained on the same data.
//!
//! Encoder rows and decoder rows are compared separately: each side gets a
//! cosine matrix and its own maximum-weight bijection. A latent is *shared*
//! when both bijections send it to the same counterpart and both matched
//! cosines clear the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::{solve_assignment_max, Assignment};
use crate::linalg::{cosine_matrix_blocked, Matrix, Scalar, DEFAULT_BLOCK};
use crate::sae::SaeParams;

/// Exceedances of max over matched cosine smaller than this are rounding.
pub const EXCEED_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub latent: usize,
    pub enc_counterpart: usize,
    pub dec_counterpart: usize,
    pub cos_enc: f64,
    pub cos_dec: f64,
    pub max_cos_enc: f64,
    pub max_cos_dec: f64,
    pub shared: bool,
}

impl MatchRecord {
    pub fn agrees(&self) -> bool {
        self.enc_counterpart == self.dec_counterpart
    }

    /// Mean of the two matched cosines.
    pub fn alignment(&self) -> f64 {
        0.5 * (self.cos_enc + self.cos_dec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharedCriterion {
    pub tau: f64,
    pub require_same_counterpart: bool,
}

impl Default for SharedCriterion {
    fn default() -> Self {
        Self { tau: 0.7, require_same_counterpart: true }
    }
}

impl SharedCriterion {
    pub fn new(tau: f64, require_same_counterpart: bool) -> Result<Self> {
        let c = Self { tau, require_same_counterpart };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!("tau = {} outside [0, 1]", self.tau)));
        }
        Ok(())
    }
}

pub fn classify_shared(
    enc_counterpart: usize,
    dec_counterpart: usize,
    cos_enc: f64,
    cos_dec: f64,
    crit: &SharedCriterion,
) -> bool {
    (!crit.require_same_counterpart || enc_counterpart == dec_counterpart) && cos_enc >= crit.tau && cos_dec >= crit.tau
}

/// How the two bijections are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// One solve per side.
    #[default]
    Independent,
    /// A single solve on the average of the two cosine matrices, used for
    /// both sides. Counterparts always agree.
    Combined,
}

/// Element type of the cosine matrices handed to the solver.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    /// Halves matrix memory. Cosines are reported at f32 resolution.
    F32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignOptions {
    pub mode: MatchMode,
    pub precision: Precision,
    pub block: usize,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { mode: MatchMode::Independent, precision: Precision::F64, block: DEFAULT_BLOCK }
    }
}

/// Mean matched cosines over a subset of latents; `None` when it is empty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetMeans {
    pub count: usize,
    pub enc: Option<f64>,
    pub dec: Option<f64>,
    pub mean: Option<f64>,
}

impl SubsetMeans {
    fn of<'a>(records: impl Iterator<Item = &'a MatchRecord>) -> Self {
        let (mut count, mut enc, mut dec) = (0usize, 0.0, 0.0);
        for r in records {
            count += 1;
            enc += r.cos_enc;
            dec += r.cos_dec;
        }
        let avg = |s: f64| (count > 0).then(|| s / count as f64);
        Self { count, enc: avg(enc), dec: avg(dec), mean: avg(0.5 * (enc + dec)) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignSummary {
    pub m: usize,
    pub tau: f64,
    pub mean_cos_enc: f64,
    pub mean_cos_dec: f64,
    pub mean_max_cos_enc: f64,
    pub mean_max_cos_dec: f64,
    pub shared_fraction: f64,
    /// Fraction of latents whose two counterparts coincide.
    pub agree_fraction: f64,
    /// Latents whose encoder and decoder counterparts coincide.
    pub agreeing: SubsetMeans,
    /// Latents whose counterparts differ.
    pub disagreeing: SubsetMeans,
}

impl AlignSummary {
    pub fn from_records(records: &[MatchRecord], crit: &SharedCriterion) -> Self {
        let m = records.len();
        let mean = |f: fn(&MatchRecord) -> f64| {
            if m == 0 {
                0.0
            } else {
                records.iter().map(f).sum::<f64>() / m as f64
            }
        };
        let frac = |f: fn(&MatchRecord) -> bool| {
            if m == 0 {
                0.0
            } else {
                records.iter().filter(|r| f(r)).count() as f64 / m as f64
            }
        };
        Self {
            m,
            tau: crit.tau,
            mean_cos_enc: mean(|r| r.cos_enc),
            mean_cos_dec: mean(|r| r.cos_dec),
            mean_max_cos_enc: mean(|r| r.max_cos_enc),
            mean_max_cos_dec: mean(|r| r.max_cos_dec),
            shared_fraction: frac(|r| r.shared),
            agree_fraction: frac(MatchRecord::agrees),
            agreeing: SubsetMeans::of(records.iter().filter(|r| r.agrees())),
            disagreeing: SubsetMeans::of(records.iter().filter(|r| !r.agrees())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// One record per latent of the first SAE.
    pub records: Vec<MatchRecord>,
    pub summary: AlignSummary,
    /// Column maxima of the two cosine matrices, i.e. the best cosine each
    /// latent of the second SAE reaches.
    pub col_max_enc: Vec<f64>,
    pub col_max_dec: Vec<f64>,
    pub crit: SharedCriterion,
}

impl Alignment {
    pub fn shared_mask(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.shared).collect()
    }

    /// The same matching seen from the second SAE.
    pub fn reversed(&self) -> Alignment {
        let m = self.records.len();
        let mut enc_inv = vec![0; m];
        let mut dec_inv = vec![0; m];
        for r in &self.records {
            enc_inv[r.enc_counterpart] = r.latent;
            dec_inv[r.dec_counterpart] = r.latent;
        }
        let records: Vec<MatchRecord> = (0..m)
            .map(|j| {
                let (e, d) = (&self.records[enc_inv[j]], &self.records[dec_inv[j]]);
                MatchRecord {
                    latent: j,
                    enc_counterpart: e.latent,
                    dec_counterpart: d.latent,
                    cos_enc: e.cos_enc,
                    cos_dec: d.cos_dec,
                    max_cos_enc: self.col_max_enc[j],
                    max_cos_dec: self.col_max_dec[j],
                    shared: classify_shared(e.latent, d.latent, e.cos_enc, d.cos_dec, &self.crit),
                }
            })
            .collect();
        let col_max_enc = self.records.iter().map(|r| r.max_cos_enc).collect();
        let col_max_dec = self.records.iter().map(|r| r.max_cos_dec).collect();
        Alignment {
            summary: AlignSummary::from_records(&records, &self.crit),
            records,
            col_max_enc,
            col_max_dec,
            crit: self.crit,
        }
    }
}

pub fn align_pair(a: &SaeParams, b: &SaeParams, crit: &SharedCriterion) -> Result<Alignment> {
    align_pair_with(a, b, crit, &AlignOptions::default())
}

pub fn align_pair_with(a: &SaeParams, b: &SaeParams, crit: &SharedCriterion, opts: &AlignOptions) -> Result<Alignment> {
    crit.validate()?;
    if a.m() != b.m() || a.d() != b.d() {
        return Err(Error::shape("align_pair", format!("{} x {}", a.m(), a.d()), format!("{} x {}", b.m(), b.d())));
    }
    if opts.block == 0 {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    let (records, col_max_enc, col_max_dec) = match opts.precision {
        Precision::F64 => match_sides::<f64>(a, b, opts)?,
        Precision::F32 => match_sides::<f32>(a, b, opts)?,
    };
    let records: Vec<MatchRecord> = records
        .into_iter()
        .map(|mut r| {
            r.shared = classify_shared(r.enc_counterpart, r.dec_counterpart, r.cos_enc, r.cos_dec, crit);
            r
        })
        .collect();
    let summary = AlignSummary::from_records(&records, crit);
    Ok(Alignment { records, summary, col_max_enc, col_max_dec, crit: *crit })
}

fn row_col_max<T: Scalar>(s: &Matrix<T>) -> (Vec<f64>, Vec<f64>) {
    let mut rows = vec![f64::NEG_INFINITY; s.rows()];
    let mut cols = vec![f64::NEG_INFINITY; s.cols()];
    for (i, r) in s.row_iter().enumerate() {
        for (j, &x) in r.iter().enumerate() {
            let x: f64 = x.into();
            rows[i] = rows[i].max(x);
            cols[j] = cols[j].max(x);
        }
    }
    (rows, cols)
}

type Sides = (Vec<MatchRecord>, Vec<f64>, Vec<f64>);

fn match_sides<T: Scalar>(a: &SaeParams, b: &SaeParams, opts: &AlignOptions) -> Result<Sides> {
    let (s_enc, s_dec) = rayon::join(
        || cosine_matrix_blocked::<T>(&a.w_enc, &b.w_enc, opts.block),
        || cosine_matrix_blocked::<T>(&a.w_dec, &b.w_dec, opts.block),
    );
    let (s_enc, s_dec) = (s_enc?, s_dec?);

    let (enc, dec): (Assignment, Assignment) = match opts.mode {
        MatchMode::Independent => {
            let (e, d) = rayon::join(|| solve_assignment_max(&s_enc), || solve_assignment_max(&s_dec));
            (e?, d?)
        }
        MatchMode::Combined => {
            let mut avg = Matrix::<f64>::zeros(s_enc.rows(), s_enc.cols());
            for ((o, &e), &d) in avg.as_mut_slice().iter_mut().zip(s_enc.as_slice()).zip(s_dec.as_slice()) {
                *o = 0.5 * (e.into() + d.into());
            }
            let sol = solve_assignment_max(&avg)?;
            (sol.clone(), sol)
        }
    };
    let (max_enc, col_enc) = row_col_max(&s_enc);
    let (max_dec, col_dec) = row_col_max(&s_dec);
    let records = (0..a.m())
        .map(|i| MatchRecord {
            latent: i,
            enc_counterpart: enc.perm[i],
            dec_counterpart: dec.perm[i],
            cos_enc: s_enc[(i, enc.perm[i])].into(),
            cos_dec: s_dec[(i, dec.perm[i])].into(),
            max_cos_enc: max_enc[i],
            max_cos_dec: max_dec[i],
            shared: false,
        })
        .collect();
    Ok((records, col_enc, col_dec))
}

/// Shared fraction at each threshold, keeping the counterpart rule of `crit`.
pub fn threshold_sweep(records: &[MatchRecord], taus: &[f64], require_same_counterpart: bool) -> Vec<(f64, f64)> {
    taus.iter()
        .map(|&tau| {
            let crit = SharedCriterion { tau, require_same_counterpart };
            let shared = records
                .iter()
                .filter(|r| classify_shared(r.enc_counterpart, r.dec_counterpart, r.cos_enc, r.cos_dec, &crit))
                .count();
            let frac = if records.is_empty() { 0.0 } else { shared as f64 / records.len() as f64 };
            (tau, frac)
        })
        .collect()
}

/// `n` evenly spaced thresholds from 0 to 1 inclusive.
pub fn default_taus(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Enc,
    Dec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedVsMaxRow {
    pub latent: usize,
    pub side: Side,
    pub matched: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedVsMax {
    /// Encoder rows first, then decoder rows, each in latent order.
    pub rows: Vec<MatchedVsMaxRow>,
    pub exceed_fraction_enc: f64,
    pub exceed_fraction_dec: f64,
}

pub fn matched_vs_max_report(records: &[MatchRecord]) -> MatchedVsMax {
    let mut rows = Vec::with_capacity(2 * records.len());
    for (side, get) in [
        (Side::Enc, (|r: &MatchRecord| (r.cos_enc, r.max_cos_enc)) as fn(&MatchRecord) -> (f64, f64)),
        (Side::Dec, |r: &MatchRecord| (r.cos_dec, r.max_cos_dec)),
    ] {
        rows.extend(records.iter().map(|r| {
            let (matched, max) = get(r);
            MatchedVsMaxRow { latent: r.latent, side, matched, max }
        }));
    }
    let exceed = |side: Side| {
        if records.is_empty() {
            return 0.0;
        }
        let n = rows.iter().filter(|r| r.side == side && r.max - r.matched > EXCEED_TOLERANCE).count();
        n as f64 / records.len() as f64
    };
    let (exceed_fraction_enc, exceed_fraction_dec) = (exceed(Side::Enc), exceed(Side::Dec));
    MatchedVsMax { rows, exceed_fraction_enc, exceed_fraction_dec }
}
