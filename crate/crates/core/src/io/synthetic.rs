use serde::{Deserialize, Serialize};

use super::{ActivationDataset, Dtype};
use crate::linalg::{row_l2_normalize, Matrix, RngState};

/// Sparse superposition toy data: `n_true` unit feature directions in `d`
/// dimensions, each present in a sample independently with probability
/// `p_active` and a coefficient uniform on `coeff_range`, plus isotropic
/// Gaussian noise of standard deviation `noise_sigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_true: usize,
    pub d: usize,
    pub n_samples: usize,
    pub p_active: f64,
    pub coeff_range: (f64, f64),
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_true: 64,
            d: 32,
            n_samples: 200_000,
            p_active: 0.05,
            coeff_range: (0.5, 1.5),
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Generated samples plus the ground truth that produced them.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: ActivationDataset,
    /// `n_true x d`, unit rows.
    pub features: Matrix,
    offsets: Vec<usize>,
    active: Vec<u32>,
}

impl SyntheticData {
    /// Indices of the features present in sample `i`, ascending.
    pub fn support(&self, i: usize) -> &[u32] {
        &self.active[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Number of samples each feature appeared in.
    pub fn feature_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.features.rows()];
        for &f in &self.active {
            counts[f as usize] += 1;
        }
        counts
    }
}

/// Panics on an invalid spec (`d`, `n_true` or `n_samples` zero, `p_active`
/// outside `(0, 1)`, or a negative noise level).
pub fn gen_synthetic(spec: &SyntheticSpec) -> SyntheticData {
    assert!(spec.d >= 1 && spec.n_true >= 1 && spec.n_samples >= 1, "empty synthetic spec");
    assert!(spec.p_active > 0.0 && spec.p_active < 1.0, "p_active must lie in (0, 1)");
    assert!(spec.noise_sigma >= 0.0, "noise_sigma must be nonnegative");
    let (lo, hi) = spec.coeff_range;
    assert!(0.0 <= lo && lo <= hi, "coefficients must be nonnegative");

    let mut feat_rng = RngState::derive(spec.seed, 0);
    let features = loop {
        let raw = feat_rng.gaussian_matrix(spec.n_true, spec.d);
        if let Ok(f) = row_l2_normalize(&raw) {
            break f;
        }
    };

    let mut rng = RngState::derive(spec.seed, 1);
    let mut samples = Matrix::zeros(spec.n_samples, spec.d);
    let mut offsets = Vec::with_capacity(spec.n_samples + 1);
    let mut active = Vec::new();
    offsets.push(0);
    for i in 0..spec.n_samples {
        let x = samples.row_mut(i);
        for f in 0..spec.n_true {
            if rng.bernoulli(spec.p_active) {
                let c = rng.uniform(lo, hi);
                for (xj, fj) in x.iter_mut().zip(features.row(f)) {
                    *xj += c * fj;
                }
                active.push(f as u32);
            }
        }
        if spec.noise_sigma > 0.0 {
            for xj in x.iter_mut() {
                *xj += spec.noise_sigma * rng.gaussian();
            }
        }
        offsets.push(active.len());
    }

    let dataset = ActivationDataset::new(samples, Dtype::F64, format!("synthetic(seed={})", spec.seed))
        .expect("non-empty synthetic dataset");
    SyntheticData { dataset, features, offsets, active }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm;

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSpec { n_samples: 500, noise_sigma: 0.1, ..SyntheticSpec::default() };
        let a = gen_synthetic(&spec);
        let b = gen_synthetic(&spec);
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.features, b.features);
        let c = gen_synthetic(&SyntheticSpec { seed: 1, ..spec });
        assert_ne!(a.dataset.samples(), c.dataset.samples());
    }

    #[test]
    fn dictionary_rows_are_unit() {
        let g = gen_synthetic(&SyntheticSpec { n_samples: 10, ..SyntheticSpec::default() });
        for row in g.features.row_iter() {
            assert!((norm(row) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_feature_samples_are_scaled_rows() {
        let g = gen_synthetic(&SyntheticSpec {
            n_true: 20,
            d: 10,
            n_samples: 2000,
            p_active: 0.02,
            ..SyntheticSpec::default()
        });
        let mut seen = 0;
        for i in 0..g.dataset.n() {
            if let [f] = g.support(i) {
                seen += 1;
                let x = g.dataset.sample(i);
                let row = g.features.row(*f as usize);
                let c: f64 = x.iter().zip(row).map(|(a, b)| a * b).sum();
                assert!((0.5..=1.5).contains(&c));
                for (xj, rj) in x.iter().zip(row) {
                    assert!((xj - c * rj).abs() < 1e-15);
                }
            }
            if g.support(i).is_empty() {
                assert!(g.dataset.sample(i).iter().all(|&v| v == 0.0));
            }
        }
        assert!(seen > 100);
    }

    #[test]
    fn activation_rate_within_binomial_bounds() {
        let p = 0.05;
        let n = 100_000;
        let g =
            gen_synthetic(&SyntheticSpec { n_true: 16, d: 4, n_samples: n, p_active: p, ..SyntheticSpec::default() });
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in g.feature_counts() {
            assert!((c as f64 - mean).abs() <= 3.0 * sd + 1e-9, "count {c}");
        }
    }
}
