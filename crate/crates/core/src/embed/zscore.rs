//! Per-dimension standardization with global statistics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions with a standard deviation below this are only centered.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

/// Streaming accumulator (Welford) so statistics can be gathered across many
/// per-segment matrices without stacking them.
#[derive(Debug, Clone)]
pub struct ZScoreAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ZScoreAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push_rows(&mut self, m: &DMatrix<f64>) -> Result<()> {
        if m.ncols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "z-score rows",
                expected: self.mean.len(),
                actual: m.ncols(),
            });
        }
        for r in 0..m.nrows() {
            self.count += 1;
            let n = self.count as f64;
            for c in 0..m.ncols() {
                let x = m[(r, c)];
                let delta = x - self.mean[c];
                self.mean[c] += delta / n;
                self.m2[c] += delta * (x - self.mean[c]);
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<ZScore> {
        if self.count < 2 {
            return Err(Error::Empty("z-score fit needs at least two rows"));
        }
        let n = self.count as f64;
        Ok(ZScore {
            std: self.m2.iter().map(|m2| (m2 / n).sqrt()).collect(),
            mean: self.mean,
        })
    }
}

impl ZScore {
    pub fn fit(m: &DMatrix<f64>) -> Result<Self> {
        let mut acc = ZScoreAccumulator::new(m.ncols());
        acc.push_rows(m)?;
        acc.finish()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn scale(&self, c: usize) -> f64 {
        if self.std[c] < DEGENERATE_STD {
            1.0
        } else {
            self.std[c]
        }
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(m)?;
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
            (m[(r, c)] - self.mean[c]) / self.scale(c)
        }))
    }

    pub fn invert(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(m)?;
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
            m[(r, c)] * self.scale(c) + self.mean[c]
        }))
    }

    fn check(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "z-score apply",
                expected: self.dim(),
                actual: m.ncols(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_values_map_to_plus_minus_one() {
        let m = DMatrix::from_column_slice(2, 1, &[1.0, 3.0]);
        let z = ZScore::fit(&m).unwrap();
        assert_eq!(z.apply(&m).unwrap().as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_column_is_centered_only() {
        let m = DMatrix::from_column_slice(3, 2, &[5.0, 5.0, 5.0, 1.0, 2.0, 3.0]);
        let z = ZScore::fit(&m).unwrap();
        let out = z.apply(&m).unwrap();
        assert_eq!(out.column(0).as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn fit_needs_two_rows() {
        assert!(ZScore::fit(&DMatrix::zeros(1, 3)).is_err());
        assert!(ZScore::fit(&DMatrix::zeros(0, 3)).is_err());
    }

    proptest! {
        #[test]
        fn fit_set_is_standardized_and_invertible(
            data in proptest::collection::vec(-1e3f64..1e3, 8..64),
        ) {
            let rows = data.len() / 4;
            prop_assume!(rows >= 2);
            let m = DMatrix::from_row_slice(rows, 4, &data[..rows * 4]);
            let z = ZScore::fit(&m).unwrap();
            let out = z.apply(&m).unwrap();
            for c in 0..4 {
                let mean = out.column(c).mean();
                prop_assert!(mean.abs() < 1e-9);
                if z.std[c] >= DEGENERATE_STD {
                    let var = out.column(c).iter().map(|x| x * x).sum::<f64>() / rows as f64;
                    prop_assert!((var - 1.0).abs() < 1e-6);
                }
            }
            let back = z.invert(&out).unwrap();
            prop_assert!((back - m).amax() < 1e-9);
        }
    }
}
