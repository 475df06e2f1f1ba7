//! Within-segment GP prediction and dense Gaussian segment likelihoods.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{emission_covariance, MaternKernel, NoiseModel, TaskCovariance};
use crate::linalg;
use crate::model::StateEmission;

/// Posterior moments of one feature's latent trajectory at a set of query times.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl PosteriorSummary {
    pub fn variances(&self) -> DVector<f64> {
        self.covariance.diagonal()
    }
}

/// One observed entry inside a segment: time offset (steps), feature index and value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observed {
    pub time: usize,
    pub feature: usize,
    pub value: f64,
}

fn latent_cov(emission: &StateEmission, k_task: &DMatrix<f64>, a: (usize, usize), b: (usize, usize)) -> f64 {
    emission.temporal.eval(a.0 as f64 - b.0 as f64) * k_task[(a.1, b.1)]
}

/// GP posterior of feature `feature` at `query_times` given in-segment observations.
pub fn posterior_predict(
    emission: &StateEmission,
    noise: &NoiseModel,
    observed: &[Observed],
    query_times: &[usize],
    feature: usize,
) -> Result<PosteriorSummary> {
    let p = emission.task.dim();
    if feature >= p || observed.iter().any(|o| o.feature >= p) {
        return Err(Error::InvalidInput(format!(
            "feature index out of range for {p} features"
        )));
    }
    if let Some(o) = observed.iter().find(|o| !o.value.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite observation at time {} feature {}",
            o.time, o.feature
        )));
    }
    let k_task = emission.task.assemble();
    let q = query_times.len();
    let mut prior = DMatrix::from_fn(q, q, |i, j| {
        latent_cov(emission, &k_task, (query_times[i], feature), (query_times[j], feature))
    });
    linalg::symmetrize(&mut prior);
    let prior_mean = DVector::from_element(q, emission.mean[feature]);
    if observed.is_empty() {
        return Ok(PosteriorSummary {
            mean: prior_mean,
            covariance: prior,
        });
    }

    let n = observed.len();
    let d = noise.variances();
    let k_oo = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (&observed[i], &observed[j]);
        let mut v = latent_cov(emission, &k_task, (a.time, a.feature), (b.time, b.feature));
        if i == j {
            v += d[a.feature];
        }
        v
    });
    let chol = linalg::cholesky(k_oo, "observed-entry covariance")?;
    let k_qo = DMatrix::from_fn(q, n, |i, j| {
        let o = &observed[j];
        latent_cov(emission, &k_task, (query_times[i], feature), (o.time, o.feature))
    });
    let resid = DVector::from_iterator(n, observed.iter().map(|o| o.value - emission.mean[o.feature]));
    let alpha = chol.solve(&resid);
    let mean = prior_mean + &k_qo * alpha;
    let v = chol.solve(&k_qo.transpose());
    let mut covariance = prior - &k_qo * v;
    linalg::symmetrize(&mut covariance);
    Ok(PosteriorSummary { mean, covariance })
}

/// Posterior latent means of every feature at `query_times`, as a `query × P` matrix, sharing
/// one factorization of the observed-entry covariance.
pub fn posterior_mean_all(
    emission: &StateEmission,
    noise: &NoiseModel,
    observed: &[Observed],
    query_times: &[usize],
) -> Result<DMatrix<f64>> {
    let p = emission.task.dim();
    let q = query_times.len();
    let mut out = DMatrix::from_fn(q, p, |_, f| emission.mean[f]);
    if observed.is_empty() {
        return Ok(out);
    }
    if observed.iter().any(|o| o.feature >= p || !o.value.is_finite()) {
        return Err(Error::InvalidInput("observed entry out of range or not finite".into()));
    }
    let k_task = emission.task.assemble();
    let d = noise.variances();
    let n = observed.len();
    let k_oo = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (&observed[i], &observed[j]);
        let mut v = latent_cov(emission, &k_task, (a.time, a.feature), (b.time, b.feature));
        if i == j {
            v += d[a.feature];
        }
        v
    });
    let chol = linalg::cholesky(k_oo, "observed-entry covariance")?;
    let resid = DVector::from_iterator(n, observed.iter().map(|o| o.value - emission.mean[o.feature]));
    let alpha = chol.solve(&resid);
    for f in 0..p {
        for (i, &t) in query_times.iter().enumerate() {
            let mut acc = 0.0;
            for (o, a) in observed.iter().zip(alpha.iter()) {
                acc += latent_cov(emission, &k_task, (t, f), (o.time, o.feature)) * a;
            }
            out[(i, f)] += acc;
        }
    }
    Ok(out)
}

/// Exact dense log-density of a fully observed `n × P` residual matrix.
pub fn exact_segment_loglik(
    kernel: &MaternKernel,
    task: &TaskCovariance,
    noise: &NoiseModel,
    residuals: &DMatrix<f64>,
) -> Result<f64> {
    let mask = DMatrix::from_element(residuals.nrows(), residuals.ncols(), true);
    masked_segment_loglik(kernel, task, noise, residuals, &mask)
}

/// Dense log-density of the observed entries of a residual matrix; unobserved entries are
/// marginalized out. Returns 0 when nothing is observed.
pub fn masked_segment_loglik(
    kernel: &MaternKernel,
    task: &TaskCovariance,
    noise: &NoiseModel,
    residuals: &DMatrix<f64>,
    mask: &DMatrix<bool>,
) -> Result<f64> {
    let (n, p) = residuals.shape();
    if mask.shape() != (n, p) || p != task.dim() || p != noise.dim() {
        return Err(Error::InvalidInput(format!(
            "residuals {n}x{p}, mask {:?}, model dimension {}",
            mask.shape(),
            task.dim()
        )));
    }
    // Feature-major vectorization: index q * n + t.
    let idx: Vec<usize> = (0..p)
        .flat_map(|q| (0..n).map(move |t| (q, t)))
        .filter(|&(q, t)| mask[(t, q)])
        .map(|(q, t)| q * n + t)
        .collect();
    if idx.is_empty() {
        return Ok(0.0);
    }
    let cov = emission_covariance(kernel, task, noise, n);
    let sub = linalg::submatrix(&cov, &idx);
    let chol = linalg::cholesky(sub, "segment emission covariance")?;
    let r = DVector::from_iterator(idx.len(), idx.iter().map(|&i| residuals[(i % n, i / n)]));
    Ok(linalg::gaussian_logpdf(&chol, &r))
}

/// `log b_j` of a `d × P` window under state `emission`, with unobserved entries marginalized.
pub fn segment_emission_loglik(
    emission: &StateEmission,
    noise: &NoiseModel,
    window: &DMatrix<f64>,
    mask: &DMatrix<bool>,
) -> Result<f64> {
    let mut resid = window.clone();
    for mut row in resid.row_iter_mut() {
        row -= emission.mean.transpose();
    }
    // Unobserved entries may hold NaN placeholders.
    for (r, &m) in resid.iter_mut().zip(mask.iter()) {
        if !m {
            *r = 0.0;
        }
    }
    masked_segment_loglik(&emission.temporal, &emission.task, noise, &resid, mask)
}

/// Mean squared and mean absolute error over the entries selected by `mask`.
pub fn trajectory_metrics(predicted: &DMatrix<f64>, truth: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<(f64, f64)> {
    if predicted.shape() != truth.shape() || mask.shape() != truth.shape() {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: predicted {:?}, truth {:?}, mask {:?}",
            predicted.shape(),
            truth.shape(),
            mask.shape()
        )));
    }
    let mut count = 0usize;
    let (mut se, mut ae) = (0.0, 0.0);
    for ((p, t), &m) in predicted.iter().zip(truth.iter()).zip(mask.iter()) {
        if m {
            let e = p - t;
            se += e * e;
            ae += e.abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((se / count as f64, ae / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Smoothness;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn emission(p: usize, l: DMatrix<f64>, ell: f64) -> StateEmission {
        StateEmission {
            mean: DVector::from_fn(p, |i, _| i as f64 * 0.5),
            temporal: MaternKernel::new(1.0, ell, Smoothness::ThreeHalves).unwrap(),
            task: TaskCovariance::new(l).unwrap(),
        }
    }

    /// Independent dense multivariate normal density computed through a full LU inverse.
    fn mvn_oracle(cov: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
        let n = x.len() as f64;
        let inv = cov.clone().try_inverse().unwrap();
        let det = cov.determinant();
        -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + det.ln() + (x.transpose() * inv * x)[0])
    }

    #[test]
    fn noise_free_interpolates() {
        let e = emission(2, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.8]), 3.0);
        let noise = NoiseModel::new(vec![1e-12, 1e-12]).unwrap();
        let obs = [
            Observed {
                time: 0,
                feature: 0,
                value: 0.4,
            },
            Observed {
                time: 2,
                feature: 0,
                value: -0.3,
            },
            Observed {
                time: 2,
                feature: 1,
                value: 1.1,
            },
        ];
        let post = posterior_predict(&e, &noise, &obs, &[2], 0).unwrap();
        assert!((post.mean[0] + 0.3).abs() < 1e-6);
        assert!(post.covariance[(0, 0)] < 1e-6);
    }

    #[test]
    fn mean_matrix_matches_per_feature_prediction() {
        let e = emission(
            3,
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.4, 0.9, 0.0, -0.2, 0.3, 0.7]),
            2.5,
        );
        let noise = NoiseModel::new(vec![0.1, 0.2, 0.15]).unwrap();
        let obs: Vec<Observed> = (0..3)
            .flat_map(|f| {
                [0usize, 5].map(|t| Observed {
                    time: t,
                    feature: f,
                    value: (t + f) as f64 * 0.3 - 0.5,
                })
            })
            .collect();
        let queries = [1, 2, 3, 4, 6];
        let all = posterior_mean_all(&e, &noise, &obs, &queries).unwrap();
        for f in 0..3 {
            let single = posterior_predict(&e, &noise, &obs, &queries, f).unwrap();
            for i in 0..queries.len() {
                assert!((all[(i, f)] - single.mean[i]).abs() < 1e-12);
            }
        }
        let prior = posterior_mean_all(&e, &noise, &[], &queries).unwrap();
        assert_eq!(prior[(4, 2)], 1.0);
    }

    #[test]
    fn no_observations_gives_prior() {
        let e = emission(2, DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.3, 0.8]), 2.0);
        let noise = NoiseModel::new(vec![0.1, 0.1]).unwrap();
        let post = posterior_predict(&e, &noise, &[], &[0, 1, 4], 1).unwrap();
        assert!(post.mean.iter().all(|&m| m == 0.5));
        let kyy = 0.3 * 0.3 + 0.8 * 0.8;
        for (i, &a) in [0usize, 1, 4].iter().enumerate() {
            for (j, &b) in [0usize, 1, 4].iter().enumerate() {
                let expected = kyy * e.temporal.eval(a as f64 - b as f64);
                assert!((post.covariance[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correlated_feature_reduces_variance() {
        let noise = NoiseModel::new(vec![0.1, 0.1]).unwrap();
        let corr = emission(2, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.8, 0.6]), 2.0);
        let indep = emission(2, DMatrix::identity(2, 2), 2.0);
        let obs = [Observed {
            time: 3,
            feature: 0,
            value: 1.0,
        }];
        let vc = posterior_predict(&corr, &noise, &obs, &[3], 1).unwrap().covariance[(0, 0)];
        let vi = posterior_predict(&indep, &noise, &obs, &[3], 1).unwrap().covariance[(0, 0)];
        assert!(vc < vi - 1e-3, "{vc} vs {vi}");
    }

    #[test]
    fn fully_masked_window_is_vacuous() {
        let e = emission(2, DMatrix::identity(2, 2), 2.0);
        let noise = NoiseModel::new(vec![0.1, 0.1]).unwrap();
        let w = DMatrix::from_element(3, 2, f64::NAN);
        let m = DMatrix::from_element(3, 2, false);
        assert_eq!(segment_emission_loglik(&e, &noise, &w, &m).unwrap(), 0.0);
    }

    #[test]
    fn single_entry_matches_scalar_gaussian() {
        let e = emission(2, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.4, 0.7]), 2.0);
        let noise = NoiseModel::new(vec![0.1, 0.2]).unwrap();
        let w = DMatrix::from_row_slice(1, 2, &[f64::NAN, 1.3]);
        let m = DMatrix::from_row_slice(1, 2, &[false, true]);
        let v = 1.0 * (0.16 + 0.49) + 0.2;
        let r = 1.3 - 0.5;
        let expected = -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + r * r / v);
        let got = segment_emission_loglik(&e, &noise, &w, &m).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn full_window_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in [1usize, 5, 17, 32] {
            let e = emission(1, DMatrix::from_element(1, 1, 1.2), 4.0);
            let noise = NoiseModel::new(vec![0.3]).unwrap();
            let w = DMatrix::from_fn(d, 1, |_, _| rng.random_range(-2.0..2.0));
            let m = DMatrix::from_element(d, 1, true);
            let got = segment_emission_loglik(&e, &noise, &w, &m).unwrap();
            let cov = emission_covariance(&e.temporal, &e.task, &noise, d);
            let x = DVector::from_iterator(d, w.iter().map(|v| v - e.mean[0]));
            assert!((got - mvn_oracle(&cov, &x)).abs() < 1e-8);
        }
    }

    #[test]
    fn metrics_examples() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let all = DMatrix::from_element(2, 2, true);
        assert_eq!(trajectory_metrics(&t, &t, &all).unwrap(), (0.0, 0.0));
        let shifted = t.map(|v| v - 0.5);
        let (mse, abs) = trajectory_metrics(&shifted, &t, &all).unwrap();
        assert!((mse - 0.25).abs() < 1e-15 && (abs - 0.5).abs() < 1e-15);
        let none = DMatrix::from_element(2, 2, false);
        assert!(matches!(trajectory_metrics(&t, &t, &none), Err(Error::EmptyMask)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn more_observations_never_increase_variance(
            seed in 0u64..10_000,
            p in 1usize..=3,
            n_obs in 1usize..=20,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = DMatrix::from_fn(p, p, |i, j| {
                if i == j { rng.random_range(0.5..1.5) } else if i > j { rng.random_range(-0.8..0.8) } else { 0.0 }
            });
            let e = emission(p, l, rng.random_range(0.5..5.0));
            let noise = NoiseModel::new((0..p).map(|_| rng.random_range(0.05..0.5)).collect()).unwrap();
            let obs: Vec<Observed> = (0..n_obs)
                .map(|_| Observed {
                    time: rng.random_range(0..20),
                    feature: rng.random_range(0..p),
                    value: rng.random_range(-2.0..2.0),
                })
                .collect();
            let query = [rng.random_range(0..20usize)];
            let feature = rng.random_range(0..p);
            let prior = posterior_predict(&e, &noise, &[], &query, feature).unwrap().covariance[(0, 0)];
            let mut last = prior;
            for k in 1..=n_obs {
                let v = posterior_predict(&e, &noise, &obs[..k], &query, feature).unwrap().covariance[(0, 0)];
                prop_assert!(v <= last + 1e-8);
                prop_assert!(v <= prior + 1e-8);
                prop_assert!(v >= -1e-8);
                last = v;
            }
        }
    }
}
