//! Sampling labeled series from a switching GP model.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::kernels::{gram_matrix, MaternKernel, NoiseModel, Smoothness, TaskCovariance};
use crate::linalg;
use crate::model::{GammaDuration, SegmentedSeries, StateEmission, SwitchingGPModel, TransitionMatrix};

/// Draws `len` steps from the semi-Markov process and per-segment GP emissions.
///
/// Segment durations are `ceil` of Gamma draws, redrawn when they exceed the duration cap, which
/// matches the filter's discretization. Untrained states are never visited. Deterministic per
/// seed.
pub fn generate_synthetic(
    model: &SwitchingGPModel,
    len: usize,
    seed: u64,
    subject_id: &str,
) -> Result<SegmentedSeries> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = model.num_states();
    let p = model.num_features();
    let trained = &model.trained;

    let mut labels = Vec::with_capacity(len);
    let mut state = WeightedIndex::new(model.effective_initial())
        .map_err(|e| Error::InvalidInput(format!("initial distribution: {e}")))?
        .sample(&mut rng);
    let gammas: Vec<Gamma<f64>> = model
        .durations
        .iter()
        .map(|g| Gamma::new(g.shape(), g.scale()).map_err(|e| Error::InvalidInput(e.to_string())))
        .collect::<Result<_>>()?;
    while labels.len() < len {
        let d = loop {
            let s: f64 = gammas[state].sample(&mut rng);
            let d = s.ceil().max(1.0) as usize;
            if d <= model.duration_cap {
                break d;
            }
        };
        labels.extend(std::iter::repeat_n(state, d));
        let weights: Vec<f64> = (0..a)
            .map(|j| {
                if trained[j] {
                    model.transitions.prob(state, j)
                } else {
                    0.0
                }
            })
            .collect();
        if a > 1 && weights.iter().any(|&w| w > 0.0) {
            state = WeightedIndex::new(&weights)
                .map_err(|e| Error::InvalidInput(format!("transition row {}: {e}", state + 1)))?
                .sample(&mut rng);
        }
    }
    labels.truncate(len);

    let mut observations = DMatrix::zeros(len, p);
    let mut factors: HashMap<(usize, usize), DMatrix<f64>> = HashMap::new();
    let task_factors: Vec<&DMatrix<f64>> = model.emissions.iter().map(|e| e.task.cholesky()).collect();
    let sd: Vec<f64> = model.noise.variances().iter().map(|v| v.sqrt()).collect();
    for seg in crate::model::segment_series(&labels) {
        let e = &model.emissions[seg.state];
        let lt = match factors.entry((seg.state, seg.duration)) {
            std::collections::hash_map::Entry::Occupied(o) => o.into_mut(),
            std::collections::hash_map::Entry::Vacant(v) => {
                let mut k = gram_matrix(&e.temporal, seg.duration - 1);
                linalg::add_gram_jitter(&mut k);
                v.insert(linalg::cholesky(k, "temporal Gram matrix")?.l())
            }
        };
        let z = DMatrix::from_fn(seg.duration, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &*lt * z * task_factors[seg.state].transpose();
        for t in 0..seg.duration {
            for q in 0..p {
                let eps: f64 = rng.sample(StandardNormal);
                observations[(seg.start + t, q)] = e.mean[q] + y[(t, q)] + sd[q] * eps;
            }
        }
    }
    SegmentedSeries::new(observations, Some(labels), subject_id)
}

/// Ranges for [`random_model`].
#[derive(Debug, Clone)]
pub struct RandomModelSpec {
    pub num_states: usize,
    pub num_features: usize,
    /// Standard deviation of the per-state mean entries.
    pub mean_spread: f64,
    pub noise: f64,
    /// Range of mean segment durations, in steps.
    pub duration_mean: (f64, f64),
    pub duration_shape: (f64, f64),
    pub lengthscale: (f64, f64),
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        Self {
            num_states: 6,
            num_features: 10,
            mean_spread: 1.0,
            noise: 0.2,
            duration_mean: (15.0, 40.0),
            duration_shape: (3.0, 8.0),
            lengthscale: (2.0, 6.0),
        }
    }
}

/// Draws a model with random means, durations, transitions and kernels. The duration cap is the
/// ceiling of the largest 0.999 duration quantile.
pub fn random_model(spec: &RandomModelSpec, seed: u64) -> Result<SwitchingGPModel> {
    let (a, p) = (spec.num_states, spec.num_features);
    if a == 0 || p == 0 {
        return Err(Error::InvalidInput(
            "model needs at least one state and one feature".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut durations = Vec::with_capacity(a);
    for _ in 0..a {
        let mean = rng.random_range(spec.duration_mean.0..=spec.duration_mean.1);
        let shape = rng.random_range(spec.duration_shape.0..=spec.duration_shape.1);
        durations.push(GammaDuration::new(shape, mean / shape)?);
    }
    let mut probs = DMatrix::zeros(a, a);
    for i in 0..a {
        if a == 1 {
            probs[(0, 0)] = 1.0;
            continue;
        }
        let w: Vec<f64> = (0..a)
            .map(|j| if i == j { 0.0 } else { rng.random_range(0.2..1.0) })
            .collect();
        let total: f64 = w.iter().sum();
        for j in 0..a {
            probs[(i, j)] = w[j] / total;
        }
    }
    let mut l = DMatrix::zeros(p, p);
    for r in 0..p {
        for c in 0..r {
            l[(r, c)] = 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        l[(r, r)] = rng.random_range(0.5..1.0);
    }
    let task = TaskCovariance::new(l)?;
    let emissions = (0..a)
        .map(|_| {
            let mean = DVector::from_fn(p, |_, _| spec.mean_spread * rng.sample::<f64, _>(StandardNormal));
            let ell = rng.random_range(spec.lengthscale.0..=spec.lengthscale.1);
            Ok(StateEmission {
                mean,
                temporal: MaternKernel::new(1.0, ell, Smoothness::ThreeHalves)?,
                task: task.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cap = durations
        .iter()
        .map(|g| g.quantile(0.999))
        .fold(0.0_f64, f64::max)
        .ceil() as usize;
    SwitchingGPModel::new(
        durations,
        TransitionMatrix::new(probs)?,
        emissions,
        NoiseModel::new(vec![spec.noise; p])?,
        cap.max(1),
    )
}

/// Embeds series into `ambient_dim` features through one random map with orthonormal rows, a
/// random offset and independent Gaussian noise of standard deviation `noise_sd`.
pub fn lift_to_ambient(
    series: &[SegmentedSeries],
    ambient_dim: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<SegmentedSeries>> {
    let p = series
        .first()
        .ok_or_else(|| Error::InvalidInput("no series to lift".into()))?
        .num_features();
    if ambient_dim < p {
        return Err(Error::InvalidInput(format!(
            "ambient dimension {ambient_dim} is below the latent dimension {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(ambient_dim, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let basis = g.qr().q().transpose();
    let offset = nalgebra::RowDVector::from_fn(ambient_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    series
        .iter()
        .map(|s| {
            let mut x = &s.observations * &basis;
            for mut row in x.row_iter_mut() {
                row += &offset;
            }
            x.iter_mut()
                .for_each(|v| *v += noise_sd * rng.sample::<f64, _>(StandardNormal));
            SegmentedSeries::new(x, s.labels.clone(), s.subject_id.clone())
        })
        .collect()
}
