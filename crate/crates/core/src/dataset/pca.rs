//! Principal-component projection fitted on training rows only.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Top principal components of a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// `k × d`, orthonormal rows sorted by explained variance.
    pub components: DMatrix<f64>,
    pub feature_means: DVector<f64>,
    /// Non-increasing eigenvalues of the sample covariance.
    pub explained_variance: Vec<f64>,
    /// When set, scores are divided by `sqrt(explained_variance)` (unit-variance components).
    pub whiten: bool,
}

impl PcaProjection {
    pub fn num_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }

    /// Centers and projects the rows of `features` (`n × d`) onto the components (`n × k`).
    pub fn apply(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if features.ncols() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "PCA expects {} features, got {}",
                self.input_dim(),
                features.ncols()
            )));
        }
        let mut centered = features.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.feature_means.transpose();
        }
        let mut scores = centered * self.components.transpose();
        if self.whiten {
            for (c, &ev) in self.explained_variance.iter().enumerate() {
                let s = ev.sqrt();
                scores.column_mut(c).iter_mut().for_each(|v| *v /= s);
            }
        }
        Ok(scores)
    }
}

/// Fits a `k`-component PCA by eigendecomposition of the sample covariance.
pub fn fit_pca(features: &DMatrix<f64>, k: usize, whiten: bool) -> Result<PcaProjection> {
    let (n, d) = features.shape();
    if k == 0 || k > d {
        return Err(Error::InvalidInput(format!(
            "cannot extract {k} components from {d} features"
        )));
    }
    if n < k.max(2) {
        return Err(Error::InsufficientData(format!(
            "PCA with {k} components needs at least {k} rows, got {n}"
        )));
    }
    let means = features.row_mean().transpose();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= means.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    crate::linalg::symmetrize(&mut cov);
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let available = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > 1e-10 * top.max(f64::MIN_POSITIVE))
        .count();
    if available < k {
        return Err(Error::InsufficientRank { needed: k, available });
    }
    let mut components = DMatrix::zeros(k, d);
    let mut explained = Vec::with_capacity(k);
    for (r, &i) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        // Sign convention: largest-magnitude loading positive.
        let (imax, _) = v.iter().enumerate().fold(
            (0, 0.0_f64),
            |acc, (j, x)| if x.abs() > acc.1 { (j, x.abs()) } else { acc },
        );
        if v[imax] < 0.0 {
            v = -v;
        }
        components.row_mut(r).copy_from(&v.transpose());
        explained.push(eig.eigenvalues[i]);
    }
    Ok(PcaProjection {
        components,
        feature_means: means,
        explained_variance: explained,
        whiten,
    })
}
