//! Supervised estimation of all model parameters from labeled series.

use log::info;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{MaternKernel, NoiseModel, Smoothness, TaskCovariance};
use crate::model::duration::{fit_duration_gamma, GammaDuration};
use crate::model::likelihood::{EmissionObjective, ParameterSharing};
use crate::model::optimize::{minimize, OptimizerConfig, OptimizerReport};
use crate::model::params::{StateEmission, SwitchingGPModel};
use crate::model::series::{Segment, SegmentedSeries};
use crate::model::transitions::{fit_transitions, TransitionMatrix, TransitionWarning};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialDistribution {
    #[default]
    Uniform,
    /// Frequencies of the first segment's state across series.
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub smoothness: Smoothness,
    pub sharing: ParameterSharing,
    pub optimizer: OptimizerConfig,
    pub freeze_noise: bool,
    /// Overrides the quantile-derived duration cap.
    pub duration_cap: Option<usize>,
    pub duration_quantile: f64,
    pub initial: InitialDistribution,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            smoothness: Smoothness::default(),
            sharing: ParameterSharing::default(),
            optimizer: OptimizerConfig::default(),
            freeze_noise: false,
            duration_cap: None,
            duration_quantile: 0.999,
            initial: InitialDistribution::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: SwitchingGPModel,
    pub optimizer: OptimizerReport,
    pub transition_warnings: Vec<TransitionWarning>,
    /// States absent from the training data.
    pub untrained: Vec<usize>,
}

/// Optimizes kernel, task and noise parameters of `init` on `data`, keeping means fixed.
pub fn fit_emissions(
    data: &[SegmentedSeries],
    init: &SwitchingGPModel,
    config: &FitConfig,
) -> Result<(SwitchingGPModel, OptimizerReport)> {
    let objective = EmissionObjective::new(init, data, config.sharing, config.freeze_noise)?;
    let x0 = objective.initial_point();
    let (x, report) = minimize(|x| objective.value_and_gradient(x), x0, &config.optimizer)?;
    info!(
        "emission fit: objective {:.6e} -> {:.6e} in {} iterations (converged: {})",
        report.initial_objective, report.final_objective, report.iterations, report.converged
    );
    Ok((objective.model_at(&x)?, report))
}

/// Fits durations, transitions, state means and emission parameters of an `num_states`-state
/// model from labeled, fully observed series.
pub fn fit(num_states: usize, data: &[SegmentedSeries], config: &FitConfig) -> Result<FitReport> {
    let init = initial_model(num_states, data, config)?;
    let (mut model, optimizer) = fit_emissions(data, &init.model, config)?;
    model.validate()?;
    model.trained = init.model.trained.clone();
    Ok(FitReport {
        model,
        optimizer,
        transition_warnings: init.transition_warnings,
        untrained: init.untrained,
    })
}

struct Initial {
    model: SwitchingGPModel,
    transition_warnings: Vec<TransitionWarning>,
    untrained: Vec<usize>,
}

fn initial_model(num_states: usize, data: &[SegmentedSeries], config: &FitConfig) -> Result<Initial> {
    if num_states == 0 {
        return Err(Error::InvalidInput("model needs at least one state".into()));
    }
    let first = data
        .first()
        .ok_or_else(|| Error::InsufficientData("no training series".into()))?;
    let p = first.num_features();
    let mut lists: Vec<Vec<Segment>> = Vec::with_capacity(data.len());
    for s in data {
        if s.num_features() != p {
            return Err(Error::InvalidInput(format!(
                "series {} has {} features, expected {p}",
                s.subject_id,
                s.num_features()
            )));
        }
        if s.labels.is_none() {
            return Err(Error::InvalidInput(format!("series {} is unlabeled", s.subject_id)));
        }
        let segs = s.segments();
        if let Some(bad) = segs.iter().find(|g| g.state >= num_states) {
            return Err(Error::InvalidInput(format!(
                "series {} has label {} but the model has {num_states} states",
                s.subject_id,
                bad.state + 1
            )));
        }
        lists.push(segs);
    }

    // Means and pooled within-state residual covariance.
    let mut sums = vec![DVector::<f64>::zeros(p); num_states];
    let mut counts = vec![0usize; num_states];
    for (s, segs) in data.iter().zip(&lists) {
        for g in segs {
            for t in g.start..g.start + g.duration {
                sums[g.state] += s.observations.row(t).transpose();
                counts[g.state] += 1;
            }
        }
    }
    let trained: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    let untrained: Vec<usize> = (0..num_states).filter(|&j| !trained[j]).collect();
    for &j in &untrained {
        log::warn!("state {} is absent from the training data and stays untrained", j + 1);
    }
    let means: Vec<DVector<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { DVector::zeros(p) })
        .collect();
    let total: usize = counts.iter().sum();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    let mut lag_num = 0.0;
    let mut lag_den = 0.0;
    for (s, segs) in data.iter().zip(&lists) {
        for g in segs {
            let mut prev: Option<DVector<f64>> = None;
            for t in g.start..g.start + g.duration {
                let r = s.observations.row(t).transpose() - &means[g.state];
                cov += &r * r.transpose();
                if let Some(pr) = &prev {
                    lag_num += pr.dot(&r);
                }
                lag_den += r.norm_squared();
                prev = Some(r);
            }
        }
    }
    cov /= total.max(1) as f64;
    let scale = cov.diagonal().max().max(1e-12);
    let noise0: Vec<f64> = cov.diagonal().iter().map(|v| (0.1 * v).max(1e-6 * scale)).collect();
    let mut task_cov = cov.clone() * 0.9;
    for q in 0..p {
        task_cov[(q, q)] += 1e-6 * scale;
    }
    let task = TaskCovariance::from_covariance(&task_cov)
        .or_else(|_| TaskCovariance::new(DMatrix::from_diagonal(&cov.diagonal().map(|v| v.max(1e-12).sqrt()))))?;
    let rho = if lag_den > 0.0 { lag_num / lag_den / 0.9 } else { 0.5 };
    let lengthscale = lengthscale_for_lag_one(config.smoothness, rho);
    let temporal = MaternKernel::new(1.0, lengthscale, config.smoothness)?;

    let mut durations = Vec::with_capacity(num_states);
    for j in 0..num_states {
        if !trained[j] {
            durations.push(GammaDuration::new(1.0, 1.0)?);
            continue;
        }
        // Integer durations are ceilings of continuous draws; fit at bin midpoints.
        let d: Vec<f64> = lists
            .iter()
            .flatten()
            .filter(|g| g.state == j)
            .map(|g| g.duration as f64 - 0.5)
            .collect();
        let g = fit_duration_gamma(&d).map_err(|e| match e {
            Error::InsufficientData(msg) => Error::InsufficientData(format!("state {}: {msg}", j + 1)),
            other => other,
        })?;
        durations.push(g);
    }
    let (transitions, transition_warnings) = if num_states == 1 {
        (TransitionMatrix::uniform(1), Vec::new())
    } else {
        fit_transitions(num_states, lists.iter().map(|l| l.as_slice()), Some(&trained))?
    };

    let duration_cap = match config.duration_cap {
        Some(c) => c,
        None => (0..num_states)
            .filter(|&j| trained[j])
            .map(|j| durations[j].quantile(config.duration_quantile).ceil() as usize)
            .max()
            .unwrap_or(1)
            .max(1),
    };

    let initial = match config.initial {
        InitialDistribution::Uniform => {
            let n = trained.iter().filter(|&&t| t).count() as f64;
            trained.iter().map(|&t| if t { 1.0 / n } else { 0.0 }).collect()
        }
        InitialDistribution::Empirical => {
            let mut c = vec![0.0; num_states];
            for l in &lists {
                if let Some(g) = l.first() {
                    c[g.state] += 1.0;
                }
            }
            let n: f64 = c.iter().sum();
            c.iter().map(|v| v / n).collect()
        }
    };

    let emissions = means
        .into_iter()
        .map(|mean| StateEmission {
            mean,
            temporal,
            task: task.clone(),
        })
        .collect();
    let mut model = SwitchingGPModel::new(
        durations,
        transitions,
        emissions,
        NoiseModel::new(noise0)?,
        duration_cap,
    )?;
    model.trained = trained;
    model.initial = initial;
    model.validate()?;
    Ok(Initial {
        model,
        transition_warnings,
        untrained,
    })
}

/// Lengthscale whose unit-lag correlation equals `rho`, clamped to a sane range.
fn lengthscale_for_lag_one(smoothness: Smoothness, rho: f64) -> f64 {
    let rho = rho.clamp(0.05, 0.995);
    let corr = |ell: f64| {
        MaternKernel::new(1.0, ell, smoothness)
            .map(|k| k.eval(1.0))
            .unwrap_or(0.0)
    };
    let (mut lo, mut hi) = (0.05_f64, 500.0_f64);
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if corr(mid) < rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;
    use crate::model::likelihood::negative_loglik;

    fn generator(a: usize, p: usize) -> SwitchingGPModel {
        let probs = if a == 3 {
            DMatrix::from_row_slice(3, 3, &[0.0, 0.6, 0.4, 0.3, 0.0, 0.7, 0.5, 0.5, 0.0])
        } else {
            TransitionMatrix::uniform(a).matrix().clone()
        };
        let l = if p == 2 {
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.8])
        } else {
            DMatrix::identity(p, p)
        };
        let emissions = (0..a)
            .map(|j| StateEmission {
                mean: DVector::from_fn(p, |q, _| 2.0 * j as f64 - q as f64),
                temporal: MaternKernel::new(1.0 + 0.5 * j as f64, 2.0 + 2.0 * j as f64, Smoothness::ThreeHalves)
                    .unwrap(),
                task: TaskCovariance::new(l.clone()).unwrap(),
            })
            .collect();
        let mut m = SwitchingGPModel::new(
            (0..a)
                .map(|j| GammaDuration::new(4.0 + j as f64, 3.0).unwrap())
                .collect(),
            TransitionMatrix::new(probs).unwrap(),
            emissions,
            NoiseModel::new(vec![0.2; p]).unwrap(),
            80,
        )
        .unwrap();
        m.emissions[0].temporal = MaternKernel::new(1.0, 2.0, Smoothness::ThreeHalves).unwrap();
        m
    }

    #[test]
    fn lengthscale_heuristic_inverts_correlation() {
        let ell = lengthscale_for_lag_one(Smoothness::ThreeHalves, 0.8);
        let k = MaternKernel::new(1.0, ell, Smoothness::ThreeHalves).unwrap();
        assert!((k.eval(1.0) - 0.8).abs() < 1e-9);
    }

    #[test]
    fn recovers_generating_model() {
        let truth = generator(3, 2);
        let data: Vec<_> = (0..6)
            .map(|i| generate_synthetic(&truth, 1500, 100 + i, &format!("s{i}")).unwrap())
            .collect();
        let report = fit(3, &data, &FitConfig::default()).unwrap();
        let m = &report.model;
        assert!(report.untrained.is_empty());
        for j in 0..3 {
            let (a, b) = (&m.emissions[j].temporal, &truth.emissions[j].temporal);
            assert!(
                (a.lengthscale() - b.lengthscale()).abs() / b.lengthscale() < 0.15,
                "ell {j}: {a:?} vs {b:?}"
            );
            assert!(
                (a.variance() - b.variance()).abs() / b.variance() < 0.15,
                "var {j}: {a:?} vs {b:?}"
            );
        }
        let fitted = negative_loglik(m, &data, false).unwrap();
        let generating = negative_loglik(&truth, &data, false).unwrap();
        assert!(fitted <= generating + 1e-6);
    }

    #[test]
    fn absent_state_is_flagged_untrained() {
        let truth = generator(2, 1);
        let data: Vec<_> = (0..3)
            .map(|i| generate_synthetic(&truth, 400, i, &format!("s{i}")).unwrap())
            .collect();
        let report = fit(3, &data, &FitConfig::default()).unwrap();
        assert_eq!(report.untrained, vec![2]);
        assert_eq!(report.model.trained, vec![true, true, false]);
        assert_eq!(report.model.transitions.prob(0, 2), 0.0);
        assert_eq!(report.model.transitions.prob(2, 2), 0.0);
        assert!(report.model.effective_initial()[2] == 0.0);
    }
}
