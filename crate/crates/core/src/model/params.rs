use nalgebra::DVector;

use crate::dataset::pca::PcaProjection;
use crate::error::{Error, Result};
use crate::kernels::{MaternKernel, NoiseModel, TaskCovariance};
use crate::model::duration::{DiscreteDuration, GammaDuration};
use crate::model::transitions::TransitionMatrix;
use crate::statespace::EmissionDynamics;

/// Emission GP of one activity state: constant mean, temporal kernel, inter-feature covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEmission {
    pub mean: DVector<f64>,
    pub temporal: MaternKernel,
    pub task: TaskCovariance,
}

/// Full parameter set of the switching GP over a hidden semi-Markov chain.
///
/// States are zero-based internally; files and CLI output use 1-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingGPModel {
    pub durations: Vec<GammaDuration>,
    pub transitions: TransitionMatrix,
    pub emissions: Vec<StateEmission>,
    pub noise: NoiseModel,
    /// Longest segment duration the filter represents (time steps).
    pub duration_cap: usize,
    /// States seen in training; untrained states are excluded from filtering.
    pub trained: Vec<bool>,
    /// Initial state distribution over all states.
    pub initial: Vec<f64>,
    pub pca: Option<PcaProjection>,
}

impl SwitchingGPModel {
    pub fn new(
        durations: Vec<GammaDuration>,
        transitions: TransitionMatrix,
        emissions: Vec<StateEmission>,
        noise: NoiseModel,
        duration_cap: usize,
    ) -> Result<Self> {
        let a = durations.len();
        let model = Self {
            trained: vec![true; a],
            initial: vec![1.0 / a.max(1) as f64; a],
            durations,
            transitions,
            emissions,
            noise,
            duration_cap,
            pca: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn num_states(&self) -> usize {
        self.durations.len()
    }

    pub fn num_features(&self) -> usize {
        self.noise.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.num_states();
        let p = self.num_features();
        if a == 0 {
            return Err(Error::InvalidInput("model needs at least one state".into()));
        }
        if self.transitions.num_states() != a
            || self.emissions.len() != a
            || self.trained.len() != a
            || self.initial.len() != a
        {
            return Err(Error::InvalidInput(format!(
                "inconsistent state count: durations {a}, transitions {}, emissions {}, trained {}, initial {}",
                self.transitions.num_states(),
                self.emissions.len(),
                self.trained.len(),
                self.initial.len()
            )));
        }
        for (j, e) in self.emissions.iter().enumerate() {
            if e.mean.len() != p || e.task.dim() != p {
                return Err(Error::InvalidInput(format!(
                    "state {} emission has dimension {} / {}, expected {p}",
                    j + 1,
                    e.mean.len(),
                    e.task.dim()
                )));
            }
        }
        if self.duration_cap == 0 {
            return Err(Error::InvalidInput("duration cap must be >= 1".into()));
        }
        if !self.trained.iter().any(|&t| t) {
            return Err(Error::InvalidInput("model has no trained states".into()));
        }
        let total: f64 = self.initial.iter().sum();
        if self.initial.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "initial distribution must be non-negative and sum to 1, sums to {total}"
            )));
        }
        if let Some(pca) = &self.pca {
            if pca.num_components() != p {
                return Err(Error::InvalidInput(format!(
                    "PCA projection has {} components for a {p}-feature model",
                    pca.num_components()
                )));
            }
        }
        Ok(())
    }

    /// Discretized duration distributions on `1..=duration_cap`.
    pub fn discrete_durations(&self) -> Result<Vec<DiscreteDuration>> {
        self.durations.iter().map(|d| d.discretize(self.duration_cap)).collect()
    }

    pub fn dynamics(&self, state: usize) -> EmissionDynamics {
        let e = &self.emissions[state];
        EmissionDynamics::new(&e.mean, &e.temporal, &e.task, &self.noise)
    }

    /// Initial distribution restricted to trained states and renormalized.
    pub fn effective_initial(&self) -> Vec<f64> {
        let mut pi: Vec<f64> = self
            .initial
            .iter()
            .zip(&self.trained)
            .map(|(&p, &t)| if t { p } else { 0.0 })
            .collect();
        let total: f64 = pi.iter().sum();
        if total > 0.0 {
            pi.iter_mut().for_each(|p| *p /= total);
        } else {
            let n = self.trained.iter().filter(|&&t| t).count() as f64;
            for (p, &t) in pi.iter_mut().zip(&self.trained) {
                *p = if t { 1.0 / n } else { 0.0 };
            }
        }
        pi
    }
}
