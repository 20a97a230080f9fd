//! Principal component analysis on flattened half-window vectors.
//!
//! Fit chooses between the `D × D` covariance and the `N × N` Gram matrix,
//! whichever is smaller; both give the same leading subspace. Variances use
//! the population normalization (divide by `N`), so the mean squared
//! reconstruction error on the fit set equals the sum of the discarded
//! eigenvalues.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a Gram eigenvector is not lifted.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub input_dim: usize,
    pub requested_dim: usize,
    pub mean: Vec<f64>,
    /// Row-major `output_dim × input_dim`; rows are orthonormal.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub total_variance: f64,
    pub fit_rows: usize,
}

impl PcaModel {
    pub fn output_dim(&self) -> usize {
        self.explained_variance.len()
    }

    /// True when the requested dimension had to be reduced.
    pub fn clamped(&self) -> bool {
        self.output_dim() < self.requested_dim
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.input_dim..(k + 1) * self.input_dim]
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "pca project",
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self
            .components
            .chunks_exact(self.input_dim)
            .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "pca reconstruct",
                expected: self.output_dim(),
                actual: z.len(),
            });
        }
        let mut out = self.mean.clone();
        for (c, &w) in self.components.chunks_exact(self.input_dim).zip(z) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}

/// Fits PCA to the rows of `data` keeping `min(target, rows − 1, cols)` components.
pub fn pca_fit(data: &DMatrix<f64>, target: usize) -> Result<PcaModel> {
    let (n, d) = data.shape();
    if n < 2 {
        return Err(Error::Empty("pca needs at least two rows"));
    }
    if d == 0 || target == 0 {
        return Err(Error::Config("pca needs a positive input and output dimension".into()));
    }
    if !data.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("pca input contains non-finite values".into()));
    }
    let k = target.min(n - 1).min(d);

    let mean: DVector<f64> = data.row_mean().transpose();
    let mut x = data.clone();
    for mut row in x.row_iter_mut() {
        row -= mean.transpose();
    }
    let nf = n as f64;

    let (values, vectors) = if d <= n {
        let cov = (x.transpose() * &x) / nf;
        let eig = SymmetricEigen::new(cov);
        let order = descending(&eig.eigenvalues);
        let vals: Vec<f64> = order.iter().take(k).map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let vecs: Vec<DVector<f64>> = order
            .iter()
            .take(k)
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect();
        (vals, vecs)
    } else {
        let gram = (&x * x.transpose()) / nf;
        let eig = SymmetricEigen::new(gram);
        let order = descending(&eig.eigenvalues);
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut vals = Vec::with_capacity(k);
        let mut vecs: Vec<DVector<f64>> = Vec::with_capacity(k);
        for &i in order.iter().take(k) {
            let lambda = eig.eigenvalues[i].max(0.0);
            vals.push(lambda);
            if lambda > RANK_TOLERANCE * top.max(f64::MIN_POSITIVE) {
                let mut v = x.transpose() * eig.eigenvectors.column(i);
                v /= v.norm();
                vecs.push(v);
            }
        }
        complete_basis(&mut vecs, k, d);
        (vals, vecs)
    };

    let total_variance: f64 = x.iter().map(|v| v * v).sum::<f64>() / nf;
    let mut components = Vec::with_capacity(k * d);
    for mut v in vectors {
        orient(&mut v);
        components.extend(v.iter());
    }
    let explained_variance_ratio = values
        .iter()
        .map(|v| if total_variance > 0.0 { v / total_variance } else { 0.0 })
        .collect();
    Ok(PcaModel {
        input_dim: d,
        requested_dim: target,
        mean: mean.iter().copied().collect(),
        components,
        explained_variance: values,
        explained_variance_ratio,
        total_variance,
        fit_rows: n,
    })
}

fn descending(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Extends an orthonormal set to `k` vectors with Gram–Schmidt over the
/// standard basis. Only used for null directions of rank-deficient data.
fn complete_basis(vecs: &mut Vec<DVector<f64>>, k: usize, d: usize) {
    let mut j = 0;
    while vecs.len() < k && j < d {
        let mut v = DVector::zeros(d);
        v[j] = 1.0;
        for _ in 0..2 {
            for u in vecs.iter() {
                let p = u.dot(&v);
                v.axpy(-p, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            vecs.push(v / norm);
        }
        j += 1;
    }
}

/// Sign convention: the largest-magnitude entry is positive.
fn orient(v: &mut DVector<f64>) {
    let pivot = v
        .iter()
        .copied()
        .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if pivot < 0.0 {
        *v *= -1.0;
    }
}
