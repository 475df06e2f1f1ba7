//! Exact linear state-space form of the half-integer Matérn kernels on a unit-step grid,
//! and the Kalman recursion that evaluates in-segment one-step predictive densities of the
//! multi-output emission model.
//!
//! A segment in state `j` is `y(t) = m_j + L_j g(t) + ε(t)` where the `P` latent processes
//! `g_q` are independent Matérn GPs sharing the state's temporal kernel and `L_j` is the task
//! Cholesky factor. Each `g_q` is a Gauss-Markov process of dimension ν + 1/2, so the
//! joint latent state has dimension `order * P` and the recursion is exact.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::kernels::{MaternKernel, NoiseModel, Smoothness, TaskCovariance};
use crate::linalg;

/// Discretized Matérn SDE for one latent process.
#[derive(Debug, Clone)]
pub struct MaternStateSpace {
    /// `exp(F Δ)` for a unit step.
    pub transition: DMatrix<f64>,
    /// `P∞ - Φ P∞ Φᵀ`.
    pub process_noise: DMatrix<f64>,
    /// Stationary covariance `P∞`; its (0, 0) entry is the kernel variance.
    pub stationary: DMatrix<f64>,
}

impl MaternStateSpace {
    pub fn new(kernel: &MaternKernel) -> Self {
        let order = kernel.smoothness().order();
        let lambda = kernel.smoothness().rate_factor() / kernel.lengthscale();
        let var = kernel.variance();

        // Companion drift of (d/dt + λ)^order; F + λI is nilpotent so exp(F) is a finite series.
        let mut drift = DMatrix::zeros(order, order);
        for i in 0..order.saturating_sub(1) {
            drift[(i, i + 1)] = 1.0;
        }
        let binom = |n: usize, k: usize| -> f64 { (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64) };
        for c in 0..order {
            drift[(order - 1, c)] = -binom(order, c) * lambda.powi((order - c) as i32);
        }
        let nilpotent = &drift + DMatrix::identity(order, order) * lambda;
        let mut transition = DMatrix::identity(order, order);
        let mut term = DMatrix::identity(order, order);
        for k in 1..order {
            term = &term * &nilpotent / k as f64;
            transition += &term;
        }
        transition *= (-lambda).exp();

        let stationary = match kernel.smoothness() {
            Smoothness::Half => DMatrix::from_element(1, 1, var),
            Smoothness::ThreeHalves => DMatrix::from_row_slice(2, 2, &[var, 0.0, 0.0, lambda * lambda * var]),
            Smoothness::FiveHalves => {
                let kappa = lambda * lambda * var / 3.0;
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[var, 0.0, -kappa, 0.0, kappa, 0.0, -kappa, 0.0, lambda.powi(4) * var],
                )
            }
        };
        let mut process_noise = &stationary - &transition * &stationary * transition.transpose();
        linalg::symmetrize(&mut process_noise);
        Self {
            transition,
            process_noise,
            stationary,
        }
    }

    pub fn order(&self) -> usize {
        self.transition.nrows()
    }
}

/// Precomputed state-space matrices for one activity state's emission process.
#[derive(Debug, Clone)]
pub struct EmissionDynamics {
    mean: DVector<f64>,
    noise: DVector<f64>,
    /// Observation map `H` (P × order·P): `H[p, q·order] = L[p, q]`.
    observation: DMatrix<f64>,
    transition: DMatrix<f64>,
    process_noise: DMatrix<f64>,
    initial_cov: DMatrix<f64>,
}

impl EmissionDynamics {
    pub fn new(mean: &DVector<f64>, kernel: &MaternKernel, task: &TaskCovariance, noise: &NoiseModel) -> Self {
        let ss = MaternStateSpace::new(kernel);
        let order = ss.order();
        let p = task.dim();
        let dim = order * p;
        let mut transition = DMatrix::zeros(dim, dim);
        let mut process_noise = DMatrix::zeros(dim, dim);
        let mut initial_cov = DMatrix::zeros(dim, dim);
        for q in 0..p {
            let o = q * order;
            transition.view_mut((o, o), (order, order)).copy_from(&ss.transition);
            process_noise
                .view_mut((o, o), (order, order))
                .copy_from(&ss.process_noise);
            initial_cov.view_mut((o, o), (order, order)).copy_from(&ss.stationary);
        }
        let l = task.cholesky();
        let mut observation = DMatrix::zeros(p, dim);
        for r in 0..p {
            for q in 0..=r {
                observation[(r, q * order)] = l[(r, q)];
            }
        }
        Self {
            mean: mean.clone(),
            noise: DVector::from_column_slice(noise.variances()),
            observation,
            transition,
            process_noise,
            initial_cov,
        }
    }

    pub fn num_features(&self) -> usize {
        self.mean.len()
    }

    /// Latent state at the first step of a fresh segment, before any observation.
    pub fn fresh(&self) -> KalmanState {
        KalmanState {
            mean: DVector::zeros(self.transition.nrows()),
            cov: self.initial_cov.clone(),
        }
    }

    /// Advances a latent state one grid step.
    pub fn predict(&self, state: &KalmanState) -> KalmanState {
        let mean = &self.transition * &state.mean;
        let mut cov = &self.transition * &state.cov * self.transition.transpose() + &self.process_noise;
        linalg::symmetrize(&mut cov);
        KalmanState { mean, cov }
    }

    /// Predictive distribution of the full observation row given a (predicted) latent state.
    pub fn observation_moments(&self, state: &KalmanState) -> (DVector<f64>, DMatrix<f64>) {
        let mean = &self.mean + &self.observation * &state.mean;
        let mut cov = &self.observation * &state.cov * self.observation.transpose();
        for p in 0..cov.nrows() {
            cov[(p, p)] += self.noise[p];
        }
        linalg::symmetrize(&mut cov);
        (mean, cov)
    }

    /// Conditions `state` on the observed entries of `row` and returns the log predictive
    /// density of those entries. An empty mask leaves the state unchanged and scores 0.
    pub fn update(&self, state: &KalmanState, row: &[f64], mask: &[bool]) -> Result<(KalmanState, f64)> {
        let observed: Vec<usize> = (0..row.len()).filter(|&p| mask[p]).collect();
        if observed.is_empty() {
            return Ok((state.clone(), 0.0));
        }
        let h = self.observation.select_rows(observed.iter());
        let hc = &h * &state.cov;
        let mut s = &hc * h.transpose();
        for (k, &p) in observed.iter().enumerate() {
            s[(k, k)] += self.noise[p];
        }
        linalg::symmetrize(&mut s);
        let innovation = DVector::from_iterator(
            observed.len(),
            observed
                .iter()
                .map(|&p| row[p] - self.mean[p])
                .zip((&h * &state.mean).iter())
                .map(|(r, hm)| r - hm),
        );
        let chol = linalg::cholesky(s, "one-step predictive covariance")?;
        let loglik = linalg::gaussian_logpdf(&chol, &innovation);
        // gain = C Hᵀ S⁻¹ ; solve S X = H C then transpose.
        let gain_t = chol.solve(&hc);
        let mean = &state.mean + gain_t.transpose() * &innovation;
        let mut cov = &state.cov - gain_t.transpose() * &hc;
        linalg::symmetrize(&mut cov);
        Ok((KalmanState { mean, cov }, loglik))
    }
}

/// Gaussian belief over the joint latent state of one segment hypothesis.
#[derive(Debug, Clone)]
pub struct KalmanState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Log-density of a fully or partially observed window under the segment emission model,
/// evaluated sequentially with the Kalman recursion. Matches the dense Gaussian marginal.
pub fn window_loglik(dynamics: &EmissionDynamics, rows: &[Vec<f64>], masks: &[Vec<bool>]) -> Result<f64> {
    let mut total = 0.0;
    let mut state = dynamics.fresh();
    for (t, (row, mask)) in rows.iter().zip(masks).enumerate() {
        if t > 0 {
            state = dynamics.predict(&state);
        }
        let (next, ll) = dynamics.update(&state, row, mask)?;
        total += ll;
        state = next;
    }
    Ok(total)
}
