//! Small dense linear-algebra helpers shared by the likelihood, prediction and filtering code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative diagonal jitter applied to kernel Gram matrices before factorization.
pub const GRAM_JITTER: f64 = 1e-8;

/// Cholesky factorization that retries once with a relative diagonal jitter.
pub fn cholesky(matrix: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let scale = matrix.diagonal().iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    if let Some(chol) = matrix.clone().cholesky() {
        return Ok(chol);
    }
    let mut jittered = matrix;
    let jitter = GRAM_JITTER * scale.max(f64::MIN_POSITIVE);
    for i in 0..jittered.nrows() {
        jittered[(i, i)] += jitter;
    }
    jittered
        .cholesky()
        .ok_or_else(|| Error::NonPositiveDefinite(what.to_string()))
}

/// Adds `GRAM_JITTER * max_diag` to the diagonal.
pub fn add_gram_jitter(matrix: &mut DMatrix<f64>) {
    let scale = matrix.diagonal().iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    for i in 0..matrix.nrows() {
        matrix[(i, i)] += GRAM_JITTER * scale;
    }
}

/// Log-density of `residual` under `N(0, L L^T)` given the Cholesky factor.
pub fn gaussian_logpdf(chol: &Cholesky<f64, Dyn>, residual: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let n = residual.len();
    let mut w = residual.clone();
    forward_substitute(l, &mut w);
    let mut logdet_half = 0.0;
    for i in 0..n {
        logdet_half += l[(i, i)].ln();
    }
    -0.5 * (n as f64 * LN_2PI + w.norm_squared()) - logdet_half
}

/// Solves `L w = b` in place for lower-triangular `L` (entries above the diagonal are ignored).
pub fn forward_substitute(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    let n = b.len();
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[(i, k)] * b[k];
        }
        b[i] = acc / l[(i, i)];
    }
}

/// Numerically stable `log(sum(exp(values)))`; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Rows/columns of `matrix` selected by `idx`.
pub fn submatrix(matrix: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| matrix[(idx[r], idx[c])])
}

pub fn subvector(vector: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| vector[i]))
}

pub fn symmetrize(matrix: &mut DMatrix<f64>) {
    let n = matrix.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
}
