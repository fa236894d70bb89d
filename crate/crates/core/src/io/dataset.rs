use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// On-disk element width of an activation file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            4 => Some(Dtype::F32),
            8 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        self.tag() as usize
    }
}

/// `n` activation vectors of dimension `d`, held in memory as f64.
///
/// When `dtype` is [`Dtype::F32`] every sample is exactly representable in
/// f32, so writing it back at that width is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationDataset {
    samples: Matrix,
    pub dtype: Dtype,
    pub source: String,
}

impl ActivationDataset {
    pub fn new(samples: Matrix, dtype: Dtype, source: impl Into<String>) -> Result<Self> {
        if samples.rows() == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one sample".into()));
        }
        if samples.cols() == 0 {
            return Err(Error::InvalidArgument("dataset needs d >= 1".into()));
        }
        let samples = match dtype {
            Dtype::F64 => samples,
            Dtype::F32 => samples.cast::<f32>().cast::<f64>(),
        };
        Ok(Self { samples, dtype, source: source.into() })
    }

    pub fn d(&self) -> usize {
        self.samples.cols()
    }

    pub fn n(&self) -> usize {
        self.samples.rows()
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    /// Per-dimension mean over all samples.
    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.d()];
        for row in self.samples.row_iter() {
            for (m, x) in mu.iter_mut().zip(row) {
                *m += x;
            }
        }
        let n = self.n() as f64;
        mu.iter_mut().for_each(|m| *m /= n);
        mu
    }
}
