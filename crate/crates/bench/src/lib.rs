//! Shared fixtures for the benchmarks.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use switchgp_core::dataset::{generate_synthetic, random_model, RandomModelSpec};
use switchgp_core::kernels::{MaternKernel, NoiseModel, Smoothness, TaskCovariance};
use switchgp_core::model::{SegmentedSeries, SwitchingGPModel};
use switchgp_core::Result;

/// Emission parameters and a white-noise residual matrix of shape `len × features`.
pub struct SegmentFixture {
    pub kernel: MaternKernel,
    pub task: TaskCovariance,
    pub noise: NoiseModel,
    pub residuals: DMatrix<f64>,
}

pub fn segment_fixture(features: usize, len: usize, seed: u64) -> Result<SegmentFixture> {
    let kernel = MaternKernel::new(1.0, 16.0, Smoothness::ThreeHalves)?;
    let task = TaskCovariance::from_covariance(&DMatrix::from_fn(
        features,
        features,
        |i, j| {
            if i == j {
                1.0
            } else {
                0.3
            }
        },
    ))?;
    let noise = NoiseModel::new(vec![0.25; features])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let residuals = DMatrix::from_fn(len, features, |_, _| StandardNormal.sample(&mut rng));
    Ok(SegmentFixture {
        kernel,
        task,
        noise,
        residuals,
    })
}

/// A random model with the default shape and one series sampled from it.
pub fn model_fixture(len: usize, seed: u64) -> Result<(SwitchingGPModel, SegmentedSeries)> {
    let model = random_model(&RandomModelSpec::default(), seed)?;
    let series = generate_synthetic(&model, len, seed.wrapping_add(1), "bench")?;
    Ok((model, series))
}
