//! Quadrature reference for the expected next-step entropy of a scalar predictive mixture.
#![allow(dead_code)]

use nalgebra::DVector;
use switchgp_core::filter::StepPredictive;
use switchgp_core::kernels::{MaternKernel, NoiseModel, Smoothness, TaskCovariance};
use switchgp_core::model::{GammaDuration, StateEmission, SwitchingGPModel, TransitionMatrix};
use switchgp_core::monitor::entropy;

pub fn scalar_model(gap: f64) -> SwitchingGPModel {
    SwitchingGPModel::new(
        vec![
            GammaDuration::new(3.0, 1.5).unwrap(),
            GammaDuration::new(2.0, 3.0).unwrap(),
        ],
        TransitionMatrix::uniform(2),
        (0..2)
            .map(|j| StateEmission {
                mean: DVector::from_element(1, gap * j as f64),
                temporal: MaternKernel::new(0.6 + 0.3 * j as f64, 2.0, Smoothness::ThreeHalves).unwrap(),
                task: TaskCovariance::identity(1),
            })
            .collect(),
        NoiseModel::new(vec![0.3]).unwrap(),
        20,
    )
    .unwrap()
}

fn normal_pdf(y: f64, mu: f64, var: f64) -> f64 {
    (-(y - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// `E[H]` over a 1-D predictive mixture by composite Simpson quadrature.
pub fn quadrature_expected_entropy(pred: &StepPredictive) -> f64 {
    let comps: Vec<(usize, f64, f64, f64)> = pred
        .components
        .iter()
        .map(|c| (c.state, c.log_weight.exp(), c.mean[0], c.covariance[(0, 0)]))
        .collect();
    let lo = comps
        .iter()
        .map(|c| c.2 - 12.0 * c.3.sqrt())
        .fold(f64::INFINITY, f64::min);
    let hi = comps
        .iter()
        .map(|c| c.2 + 12.0 * c.3.sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let integrand = |y: f64| {
        let mut per_state = vec![0.0; pred.num_states];
        for &(j, w, mu, var) in &comps {
            per_state[j] += w * normal_pdf(y, mu, var);
        }
        let density: f64 = per_state.iter().sum();
        if density == 0.0 {
            return 0.0;
        }
        let post: Vec<f64> = per_state.iter().map(|p| p / density).collect();
        density * entropy(&post)
    };
    let mut acc = integrand(lo) + integrand(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(lo + i as f64 * h);
    }
    acc * h / 3.0
}
