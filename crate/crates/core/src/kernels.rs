//! Temporal Matérn kernels, the Cholesky-parameterized inter-feature covariance, and
//! Kronecker assembly of the emission covariance.
//!
//! Observation vectors are laid out feature-major: all time steps of feature 1, then all
//! time steps of feature 2, and so on. Under that layout the emission covariance of a
//! segment is `K_task ⊗ K_time + D ⊗ I`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Half-integer Matérn orders with closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Smoothness {
    Half,
    #[default]
    ThreeHalves,
    FiveHalves,
}

impl Smoothness {
    /// Dimension of the equivalent linear state-space model (ν + 1/2).
    pub fn order(self) -> usize {
        match self {
            Smoothness::Half => 1,
            Smoothness::ThreeHalves => 2,
            Smoothness::FiveHalves => 3,
        }
    }

    pub(crate) fn rate_factor(self) -> f64 {
        match self {
            Smoothness::Half => 1.0,
            Smoothness::ThreeHalves => 3f64.sqrt(),
            Smoothness::FiveHalves => 5f64.sqrt(),
        }
    }
}

impl fmt::Display for Smoothness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Smoothness::Half => "1/2",
            Smoothness::ThreeHalves => "3/2",
            Smoothness::FiveHalves => "5/2",
        })
    }
}

impl FromStr for Smoothness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1/2" | "0.5" => Ok(Smoothness::Half),
            "3/2" | "1.5" => Ok(Smoothness::ThreeHalves),
            "5/2" | "2.5" => Ok(Smoothness::FiveHalves),
            other => Err(Error::InvalidInput(format!(
                "unsupported Matérn smoothness {other:?}; expected 1/2, 3/2 or 5/2"
            ))),
        }
    }
}

/// Stationary Matérn covariance over time lags measured in sampling steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternKernel {
    variance: f64,
    lengthscale: f64,
    smoothness: Smoothness,
}

impl MaternKernel {
    pub fn new(variance: f64, lengthscale: f64, smoothness: Smoothness) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::InvalidInput(format!(
                "kernel variance must be finite and > 0, got {variance}"
            )));
        }
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "kernel lengthscale must be finite and > 0, got {lengthscale}"
            )));
        }
        Ok(Self {
            variance,
            lengthscale,
            smoothness,
        })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// `k(lag)`; symmetric in the sign of `lag`, equal to the variance at zero.
    pub fn eval(&self, lag: f64) -> f64 {
        let a = self.smoothness.rate_factor() * lag.abs() / self.lengthscale;
        let poly = match self.smoothness {
            Smoothness::Half => 1.0,
            Smoothness::ThreeHalves => 1.0 + a,
            Smoothness::FiveHalves => 1.0 + a + a * a / 3.0,
        };
        self.variance * poly * (-a).exp()
    }

    /// Derivative of `k(lag)` with respect to `log(lengthscale)`.
    pub fn d_log_lengthscale(&self, lag: f64) -> f64 {
        let a = self.smoothness.rate_factor() * lag.abs() / self.lengthscale;
        let poly = match self.smoothness {
            Smoothness::Half => a,
            Smoothness::ThreeHalves => a * a,
            Smoothness::FiveHalves => a * a * (1.0 + a) / 3.0,
        };
        self.variance * poly * (-a).exp()
    }

    /// `[k(0), k(1), …, k(n-1)]` on the unit grid.
    pub fn autocovariance(&self, n: usize) -> Vec<f64> {
        (0..n).map(|lag| self.eval(lag as f64)).collect()
    }
}

/// Free-form inter-feature covariance stored through its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCovariance {
    cholesky: DMatrix<f64>,
}

impl TaskCovariance {
    /// Validates that `cholesky` is square, lower-triangular, with a strictly positive diagonal.
    pub fn new(cholesky: DMatrix<f64>) -> Result<Self> {
        let p = cholesky.nrows();
        if p == 0 || cholesky.ncols() != p {
            return Err(Error::InvalidInput(format!(
                "task Cholesky factor must be square and non-empty, got {}x{}",
                cholesky.nrows(),
                cholesky.ncols()
            )));
        }
        for i in 0..p {
            if !(cholesky[(i, i)] > 0.0 && cholesky[(i, i)].is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "task Cholesky diagonal entry {i} must be > 0, got {}",
                    cholesky[(i, i)]
                )));
            }
            for j in 0..p {
                let v = cholesky[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InvalidInput("non-finite task Cholesky entry".into()));
                }
                if j > i && v != 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "task Cholesky factor must be lower-triangular; entry ({i},{j}) = {v}"
                    )));
                }
            }
        }
        Ok(Self { cholesky })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            cholesky: DMatrix::identity(p, p),
        }
    }

    /// Factorizes a symmetric positive-definite covariance.
    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NonPositiveDefinite("task covariance".into()))?;
        Self::new(chol.l())
    }

    pub fn dim(&self) -> usize {
        self.cholesky.nrows()
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    /// `L Lᵀ`, exactly symmetric.
    pub fn assemble(&self) -> DMatrix<f64> {
        let mut out = &self.cholesky * self.cholesky.transpose();
        crate::linalg::symmetrize(&mut out);
        out
    }
}

/// Independent per-feature observation noise variances (the diagonal of `D`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    variances: Vec<f64>,
}

impl NoiseModel {
    pub fn new(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() {
            return Err(Error::InvalidInput("noise model needs at least one feature".into()));
        }
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "noise variances must be finite and > 0, got {v}"
            )));
        }
        Ok(Self { variances })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }
}

/// Symmetric Toeplitz Gram matrix of `kernel` on the grid `0..=num_steps`.
pub fn gram_matrix(kernel: &MaternKernel, num_steps: usize) -> DMatrix<f64> {
    let n = num_steps + 1;
    let acov = kernel.autocovariance(n);
    DMatrix::from_fn(n, n, |i, j| acov[i.abs_diff(j)])
}

/// Standard Kronecker product: block `(i, j)` of the result is `outer[(i, j)] * inner`.
pub fn kron(outer: &DMatrix<f64>, inner: &DMatrix<f64>) -> DMatrix<f64> {
    outer.kronecker(inner)
}

/// Covariance of a feature-major observation vector: `task ⊗ temporal`.
pub fn kron_cov(temporal: &DMatrix<f64>, task: &DMatrix<f64>) -> DMatrix<f64> {
    kron(task, temporal)
}

/// Full segment covariance `K_task ⊗ K_time + D ⊗ I` for `n` consecutive steps.
pub fn emission_covariance(kernel: &MaternKernel, task: &TaskCovariance, noise: &NoiseModel, n: usize) -> DMatrix<f64> {
    let temporal = gram_matrix(kernel, n.saturating_sub(1));
    let mut cov = kron_cov(&temporal, &task.assemble());
    for (p, &v) in noise.variances().iter().enumerate() {
        for t in 0..n {
            cov[(p * n + t, p * n + t)] += v;
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn matern_at_zero_is_variance() {
        for s in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
            let k = MaternKernel::new(2.0, 0.7, s).unwrap();
            assert_eq!(k.eval(0.0), 2.0);
        }
    }

    #[test]
    fn matern_half_is_exponential() {
        let k = MaternKernel::new(1.0, 1.0, Smoothness::Half).unwrap();
        assert_abs_diff_eq!(k.eval(1.0), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k.eval(1.0), 0.36788, epsilon = 1e-5);
        assert_eq!(k.eval(-1.3), k.eval(1.3));
    }

    #[test]
    fn matern_decays() {
        let k = MaternKernel::new(1.0, 1.0, Smoothness::ThreeHalves).unwrap();
        assert!(k.eval(100.0).abs() < 1e-10);
    }

    #[test]
    fn matern_rejects_bad_parameters() {
        assert!(MaternKernel::new(0.0, 1.0, Smoothness::Half).is_err());
        assert!(MaternKernel::new(1.0, -1.0, Smoothness::Half).is_err());
        assert!(MaternKernel::new(f64::NAN, 1.0, Smoothness::Half).is_err());
    }

    #[test]
    fn lengthscale_derivative_matches_finite_difference() {
        for s in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
            let ell: f64 = 2.3;
            let h = 1e-6;
            for lag in [0.0, 0.5, 1.0, 3.0, 7.0] {
                let up = MaternKernel::new(1.7, (ell.ln() + h).exp(), s).unwrap().eval(lag);
                let dn = MaternKernel::new(1.7, (ell.ln() - h).exp(), s).unwrap().eval(lag);
                let fd = (up - dn) / (2.0 * h);
                let an = MaternKernel::new(1.7, ell, s).unwrap().d_log_lengthscale(lag);
                assert_abs_diff_eq!(fd, an, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn smoothness_parses() {
        assert_eq!("3/2".parse::<Smoothness>().unwrap(), Smoothness::ThreeHalves);
        assert_eq!("2.5".parse::<Smoothness>().unwrap(), Smoothness::FiveHalves);
        assert!("1".parse::<Smoothness>().is_err());
        assert_eq!(Smoothness::default(), Smoothness::ThreeHalves);
    }

    #[test]
    fn task_cov_examples() {
        assert_eq!(TaskCovariance::identity(2).assemble(), DMatrix::identity(2, 2));
        let tc = TaskCovariance::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1.0])).unwrap();
        assert_eq!(tc.assemble(), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]));
    }

    #[test]
    fn task_cov_rejects_upper_entries_and_bad_diagonal() {
        assert!(TaskCovariance::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(TaskCovariance::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, -1.0])).is_err());
    }

    #[test]
    fn gram_examples() {
        let k = MaternKernel::new(1.0, 1.0, Smoothness::Half).unwrap();
        assert_eq!(gram_matrix(&k, 0), DMatrix::from_element(1, 1, 1.0));
        let g = gram_matrix(&k, 2);
        let row = [1.0, (-1.0f64).exp(), (-2.0f64).exp()];
        for j in 0..3 {
            assert_abs_diff_eq!(g[(0, j)], row[j], epsilon = 1e-15);
        }
        assert_eq!(g, g.transpose());
        assert_eq!(g[(1, 2)], g[(0, 1)]);
    }

    #[test]
    fn kron_examples() {
        let s = kron(&DMatrix::from_element(1, 1, 2.0), &DMatrix::from_element(1, 1, 3.0));
        assert_eq!(s, DMatrix::from_element(1, 1, 6.0));

        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let bd = kron(&DMatrix::identity(2, 2), &b);
        let expected = DMatrix::from_row_slice(4, 4, &[1., 2., 0., 0., 3., 4., 0., 0., 0., 0., 1., 2., 0., 0., 3., 4.]);
        assert_eq!(bd, expected);

        let a = DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let ab = kron(&a, &b);
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                5., 10., 6., 12., 15., 20., 18., 24., 7., 14., 8., 16., 21., 28., 24., 32.,
            ],
        );
        assert_eq!(ab, expected);
    }

    #[test]
    fn kron_cov_is_feature_major() {
        // Feature-major: entry (p*n + t, q*n + s) = task[p,q] * temporal[t,s].
        let temporal = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let task = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let full = kron_cov(&temporal, &task);
        assert_eq!(full[(1, 2)], 0.3 * 0.5);
        assert_eq!(full[(2, 3)], 1.0 * 0.5);
        assert_eq!(full[(0, 1)], 2.0 * 0.5);
        // Identity task leaves block-diagonal copies of the temporal Gram.
        let bd = kron_cov(&temporal, &DMatrix::identity(2, 2));
        assert_eq!(bd.view((0, 0), (2, 2)), temporal.view((0, 0), (2, 2)));
        assert_eq!(bd.view((2, 2), (2, 2)), temporal.view((0, 0), (2, 2)));
    }

    fn lower_factor(p: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-2.0f64..2.0, p * p).prop_map(move |v| {
            DMatrix::from_fn(p, p, |i, j| {
                if j > i {
                    0.0
                } else if i == j {
                    0.1 + v[i * p + j].abs()
                } else {
                    v[i * p + j]
                }
            })
        })
    }

    fn sym_eigs(m: &DMatrix<f64>) -> Vec<f64> {
        let mut e: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    proptest! {
        #[test]
        fn task_cov_round_trips_through_cholesky(l in (1usize..5).prop_flat_map(lower_factor)) {
            let tc = TaskCovariance::new(l.clone()).unwrap();
            let cov = tc.assemble();
            prop_assert_eq!(&cov, &cov.transpose());
            prop_assert!(sym_eigs(&cov)[0] > 0.0);
            let back = cov.cholesky().unwrap().l();
            for (a, b) in back.iter().zip(l.iter()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn gram_plus_jitter_is_positive_definite(
            var in 0.01f64..10.0,
            ell in 0.05f64..50.0,
            steps in 0usize..40,
            s in prop_oneof![Just(Smoothness::Half), Just(Smoothness::ThreeHalves), Just(Smoothness::FiveHalves)],
        ) {
            let k = MaternKernel::new(var, ell, s).unwrap();
            let mut g = gram_matrix(&k, steps);
            prop_assert_eq!(&g, &g.transpose());
            crate::linalg::add_gram_jitter(&mut g);
            prop_assert!(g.cholesky().is_some());
        }

        #[test]
        fn kron_eigenvalues_are_pairwise_products(
            a in (1usize..3).prop_flat_map(lower_factor),
            b in (1usize..3).prop_flat_map(lower_factor),
        ) {
            let a = &a * a.transpose();
            let b = &b * b.transpose();
            let ea = sym_eigs(&a);
            let eb = sym_eigs(&b);
            let mut products: Vec<f64> = ea.iter().flat_map(|x| eb.iter().map(move |y| x * y)).collect();
            products.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let ek = sym_eigs(&kron(&a, &b));
            for (x, y) in ek.iter().zip(products.iter()) {
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()));
            }
        }
    }
}
