//! Explicit-duration forward filtering over the semi-Markov chain with GP emissions.
//!
//! Hypotheses are pairs (state `j`, elapsed duration `d`) of the segment occupying the current
//! step. For each live hypothesis the filter keeps `log α(j, d)`, the joint log-probability of
//! the observations so far and a segment of state `j` having started `d - 1` steps ago, plus a
//! Kalman belief over that segment's latent GP state. Emission terms are the one-step
//! predictive densities of the in-segment process, whose product over a window equals the
//! segment marginal density.
//!
//! Recursion, with `g_j` the discretized duration mass and `G_j(d) = P(s ≥ d)`:
//!
//! * exit mass `E(i) = logsumexp_d α(i, d) + log g_i(d)`
//! * entry mass `S(j) = logsumexp_{i≠j} E(i) + log p_ij`
//! * new segment `α'(j, 1) = S(j) + log b_j(y_t)`
//! * continuation `α'(j, d + 1) = α(j, d) + log b_j(y_t | segment so far)`
//!
//! The state occupancy at time `t` is `α(j, d) + log G_j(d)`, which is what the exposed table
//! and posterior report. After each step the occupancy is normalized to sum to one and the
//! normalizer is added to the running log evidence. Hypotheses more than `prune` nats below the
//! best one are dropped.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, logsumexp};
use crate::model::{DiscreteDuration, SwitchingGPModel};
use crate::statespace::{EmissionDynamics, KalmanState};

/// Default pruning threshold in nats below the best hypothesis.
pub const DEFAULT_PRUNE: f64 = 30.0;

#[derive(Debug, Clone)]
struct Hypothesis {
    state: usize,
    elapsed: usize,
    log_alpha: f64,
    kalman: KalmanState,
}

/// Filter belief after `time_index` observed rows.
#[derive(Debug, Clone)]
pub struct ForwardState {
    num_states: usize,
    duration_cap: usize,
    hypotheses: Vec<Hypothesis>,
    /// Cached occupancy weights `α + log G`, aligned with `hypotheses`.
    occupancy: Vec<f64>,
    time_index: usize,
    log_evidence: f64,
    last_increment: f64,
}

impl ForwardState {
    /// Number of rows absorbed so far.
    pub fn time_index(&self) -> usize {
        self.time_index
    }

    /// `log P(y_1..y_t)` accumulated over all steps.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    /// `log P(y_t | y_1..y_{t-1})` of the most recent step.
    pub fn last_log_evidence_increment(&self) -> f64 {
        self.last_increment
    }

    pub fn num_hypotheses(&self) -> usize {
        self.hypotheses.len()
    }

    /// `A × D_max` table of normalized log occupancies; `-inf` where pruned or impossible.
    pub fn log_alpha_table(&self) -> DMatrix<f64> {
        let mut t = DMatrix::from_element(self.num_states, self.duration_cap, f64::NEG_INFINITY);
        for (h, &w) in self.hypotheses.iter().zip(&self.occupancy) {
            t[(h.state, h.elapsed - 1)] = w;
        }
        t
    }

    /// Posterior over states at the current step; sums to one.
    pub fn state_posterior(&self) -> Vec<f64> {
        let mut per_state = vec![f64::NEG_INFINITY; self.num_states];
        for j in 0..self.num_states {
            per_state[j] = logsumexp(
                self.hypotheses
                    .iter()
                    .zip(&self.occupancy)
                    .filter(|(h, _)| h.state == j)
                    .map(|(_, &w)| w),
            );
        }
        let norm = logsumexp(per_state.iter().copied());
        per_state.iter().map(|w| (w - norm).exp()).collect()
    }

    /// Most probable state; ties go to the lowest index.
    pub fn map_state(&self) -> usize {
        argmax_lowest(&self.state_posterior())
    }

    /// Posterior over the elapsed duration of the current segment, `1..=D_max`.
    pub fn elapsed_posterior(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.duration_cap];
        for (h, &w) in self.hypotheses.iter().zip(&self.occupancy) {
            out[h.elapsed - 1] += w.exp();
        }
        out
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One Gaussian component of the next-step predictive over all features.
#[derive(Debug, Clone)]
pub struct PredictiveComponent {
    pub state: usize,
    /// Elapsed duration the hypothesis would have at the next step (1 for a new segment).
    pub elapsed: usize,
    pub log_weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Next-step predictive mixture over all features with normalized log-weights.
#[derive(Debug, Clone)]
pub struct StepPredictive {
    pub num_states: usize,
    pub components: Vec<PredictiveComponent>,
}

/// Gaussian mixture over the features of one group.
#[derive(Debug, Clone)]
pub struct PredictiveMixture {
    pub features: Vec<usize>,
    /// `(log-weight, mean, covariance)` per component; log-weights normalize to 0.
    pub components: Vec<(f64, DVector<f64>, DMatrix<f64>)>,
}

impl PredictiveMixture {
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.features.len());
        for (w, mu, _) in &self.components {
            m += mu * w.exp();
        }
        m
    }

    pub fn log_density(&self, y: &DVector<f64>) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.components.len());
        for (w, mu, cov) in &self.components {
            let chol = linalg::cholesky(cov.clone(), "predictive component covariance")?;
            terms.push(w + linalg::gaussian_logpdf(&chol, &(y - mu)));
        }
        Ok(logsumexp(terms))
    }
}

impl StepPredictive {
    /// Restriction of every component to `features`.
    pub fn restrict(&self, features: &[usize]) -> PredictiveMixture {
        PredictiveMixture {
            features: features.to_vec(),
            components: self
                .components
                .iter()
                .map(|c| {
                    (
                        c.log_weight,
                        linalg::subvector(&c.mean, features),
                        linalg::submatrix(&c.covariance, features),
                    )
                })
                .collect(),
        }
    }

    /// Draws a full observation row: a component by weight, then a Gaussian draw from it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let u: f64 = rng.random();
        let p = self.components[0].mean.len();
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        self.sample_with(u, &z)
    }

    /// Index of the component selected by a uniform draw `u`, by cumulative weight.
    pub fn component_for(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.log_weight.exp();
            if u < acc {
                return i;
            }
        }
        self.components.len() - 1
    }

    /// Deterministic transform of a uniform `u` and a standard normal vector `z` into a draw.
    pub fn sample_with(&self, u: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
        let c = &self.components[self.component_for(u)];
        let chol = linalg::cholesky(c.covariance.clone(), "predictive component covariance")?;
        Ok(&c.mean + chol.l() * z)
    }

    /// State posterior after observing `y` on `features`, without running the filter. Equals
    /// the posterior of the updated filter state.
    pub fn hypothetical_posterior(&self, features: &[usize], y: &DVector<f64>) -> Result<Vec<f64>> {
        let mut per_state = vec![Vec::new(); self.num_states];
        for c in &self.components {
            let ll = if features.is_empty() {
                0.0
            } else {
                let cov = linalg::submatrix(&c.covariance, features);
                let chol = linalg::cholesky(cov, "predictive component covariance")?;
                linalg::gaussian_logpdf(&chol, &(y - linalg::subvector(&c.mean, features)))
            };
            per_state[c.state].push(c.log_weight + ll);
        }
        let logs: Vec<f64> = per_state.into_iter().map(logsumexp).collect();
        let norm = logsumexp(logs.iter().copied());
        Ok(logs.iter().map(|l| (l - norm).exp()).collect())
    }
}

/// Forward filter bound to one model.
#[derive(Debug, Clone)]
pub struct Filter<'m> {
    model: &'m SwitchingGPModel,
    durations: Vec<DiscreteDuration>,
    dynamics: Vec<EmissionDynamics>,
    log_initial: Vec<f64>,
    prune: Option<f64>,
}

impl<'m> Filter<'m> {
    pub fn new(model: &'m SwitchingGPModel) -> Result<Self> {
        model.validate()?;
        let log_initial = model.effective_initial().iter().map(|p| p.ln()).collect();
        Ok(Self {
            durations: model.discrete_durations()?,
            dynamics: (0..model.num_states()).map(|j| model.dynamics(j)).collect(),
            log_initial,
            model,
            prune: Some(DEFAULT_PRUNE),
        })
    }

    /// Sets the pruning threshold in nats; `None` keeps every hypothesis.
    pub fn with_pruning(mut self, prune: Option<f64>) -> Self {
        self.prune = prune;
        self
    }

    pub fn model(&self) -> &SwitchingGPModel {
        self.model
    }

    pub fn num_states(&self) -> usize {
        self.model.num_states()
    }

    pub fn num_features(&self) -> usize {
        self.model.num_features()
    }

    /// Segment-transition probability `g_i(d') · p_ij · g_j(d)` for `i ≠ j`, where the
    /// durations are the discretized, truncated and renormalized Gamma masses. A single-state
    /// model renews its only state with probability one.
    pub fn duration_transition(&self, i: usize, d_prev: usize, j: usize, d: usize) -> f64 {
        let p = if self.num_states() == 1 {
            1.0
        } else {
            self.model.transitions.prob(i, j)
        };
        if (i == j && self.num_states() > 1) || !self.model.trained[j] {
            return 0.0;
        }
        (self.durations[i].log_mass(d_prev) + self.durations[j].log_mass(d)).exp() * p
    }

    fn check_row(&self, row: &[f64], mask: &[bool]) -> Result<()> {
        let p = self.num_features();
        if row.len() != p || mask.len() != p {
            return Err(Error::InvalidInput(format!(
                "row has {} values and {} mask entries, model expects {p}",
                row.len(),
                mask.len()
            )));
        }
        if let Some(q) = (0..p).find(|&q| mask[q] && !row[q].is_finite()) {
            return Err(Error::InvalidInput(format!("observed feature {q} is not finite")));
        }
        Ok(())
    }

    /// Filter state after the first row.
    pub fn init(&self, row: &[f64], mask: &[bool]) -> Result<ForwardState> {
        self.check_row(row, mask)?;
        let mut hyps = Vec::new();
        for j in 0..self.num_states() {
            if self.log_initial[j] == f64::NEG_INFINITY {
                continue;
            }
            let (kalman, ll) = self.dynamics[j].update(&self.dynamics[j].fresh(), row, mask)?;
            hyps.push(Hypothesis {
                state: j,
                elapsed: 1,
                log_alpha: self.log_initial[j] + ll,
                kalman,
            });
        }
        self.finish(hyps, 1, 0.0)
    }

    /// Log entry mass `S(j)` of a new segment of each state at the next step.
    fn entry_mass(&self, state: &ForwardState) -> Vec<f64> {
        let a = self.num_states();
        let exit: Vec<f64> = (0..a)
            .map(|i| {
                logsumexp(
                    state
                        .hypotheses
                        .iter()
                        .filter(|h| h.state == i)
                        .map(|h| h.log_alpha + self.durations[i].log_mass(h.elapsed)),
                )
            })
            .collect();
        if a == 1 {
            // A single-state chain renews itself at each segment end.
            return exit;
        }
        (0..a)
            .map(|j| {
                if !self.model.trained[j] {
                    return f64::NEG_INFINITY;
                }
                logsumexp(
                    (0..a)
                        .filter(|&i| i != j)
                        .map(|i| exit[i] + self.model.transitions.prob(i, j).ln()),
                )
            })
            .collect()
    }

    /// Absorbs one row; `mask[p]` false marks feature `p` as unobserved.
    pub fn step(&self, state: &ForwardState, row: &[f64], mask: &[bool]) -> Result<ForwardState> {
        self.check_row(row, mask)?;
        let entry = self.entry_mass(state);
        let mut hyps = Vec::with_capacity(state.hypotheses.len() + self.num_states());
        for j in 0..self.num_states() {
            if entry[j] > f64::NEG_INFINITY {
                let (kalman, ll) = self.dynamics[j].update(&self.dynamics[j].fresh(), row, mask)?;
                hyps.push(Hypothesis {
                    state: j,
                    elapsed: 1,
                    log_alpha: entry[j] + ll,
                    kalman,
                });
            }
        }
        for h in &state.hypotheses {
            let next = h.elapsed + 1;
            if self.durations[h.state].log_survival(next) == f64::NEG_INFINITY {
                continue;
            }
            let dynamics = &self.dynamics[h.state];
            let (kalman, ll) = dynamics.update(&dynamics.predict(&h.kalman), row, mask)?;
            hyps.push(Hypothesis {
                state: h.state,
                elapsed: next,
                log_alpha: h.log_alpha + ll,
                kalman,
            });
        }
        self.finish(hyps, state.time_index + 1, state.log_evidence)
    }

    fn finish(&self, mut hyps: Vec<Hypothesis>, time_index: usize, log_evidence: f64) -> Result<ForwardState> {
        let mut occupancy: Vec<f64> = hyps
            .iter()
            .map(|h| h.log_alpha + self.durations[h.state].log_survival(h.elapsed))
            .collect();
        let norm = logsumexp(occupancy.iter().copied());
        if !norm.is_finite() {
            return Err(Error::FilterCollapse { step: time_index });
        }
        let best = occupancy.iter().copied().fold(f64::NEG_INFINITY, f64::max) - norm;
        let cutoff = self.prune.map_or(f64::NEG_INFINITY, |p| best - p);
        let mut keep: Vec<Hypothesis> = hyps
            .drain(..)
            .zip(occupancy.drain(..))
            .filter(|(_, w)| *w > f64::NEG_INFINITY && w - norm >= cutoff)
            .map(|(mut h, _)| {
                h.log_alpha -= norm;
                h
            })
            .collect();
        keep.sort_by_key(|h| (h.state, h.elapsed));
        let occupancy: Vec<f64> = keep
            .iter()
            .map(|h| h.log_alpha + self.durations[h.state].log_survival(h.elapsed))
            .collect();
        Ok(ForwardState {
            num_states: self.num_states(),
            duration_cap: self.model.duration_cap,
            hypotheses: keep,
            occupancy,
            time_index,
            log_evidence: log_evidence + norm,
            last_increment: norm,
        })
    }

    /// Predictive mixture of the next row over all features, pruned like the filter table.
    pub fn step_predictive(&self, state: &ForwardState) -> StepPredictive {
        let entry = self.entry_mass(state);
        let mut components = Vec::new();
        for j in 0..self.num_states() {
            if entry[j] > f64::NEG_INFINITY {
                let (mean, covariance) = self.dynamics[j].observation_moments(&self.dynamics[j].fresh());
                components.push(PredictiveComponent {
                    state: j,
                    elapsed: 1,
                    log_weight: entry[j],
                    mean,
                    covariance,
                });
            }
        }
        for h in &state.hypotheses {
            let next = h.elapsed + 1;
            let lw = h.log_alpha + self.durations[h.state].log_survival(next);
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let dynamics = &self.dynamics[h.state];
            let (mean, covariance) = dynamics.observation_moments(&dynamics.predict(&h.kalman));
            components.push(PredictiveComponent {
                state: h.state,
                elapsed: next,
                log_weight: lw,
                mean,
                covariance,
            });
        }
        self.normalize_predictive(components)
    }

    /// Predictive of the first row, before anything is observed.
    pub fn initial_predictive(&self) -> StepPredictive {
        let components = (0..self.num_states())
            .filter(|&j| self.log_initial[j] > f64::NEG_INFINITY)
            .map(|j| {
                let (mean, covariance) = self.dynamics[j].observation_moments(&self.dynamics[j].fresh());
                PredictiveComponent {
                    state: j,
                    elapsed: 1,
                    log_weight: self.log_initial[j],
                    mean,
                    covariance,
                }
            })
            .collect();
        self.normalize_predictive(components)
    }

    fn normalize_predictive(&self, mut components: Vec<PredictiveComponent>) -> StepPredictive {
        let norm = logsumexp(components.iter().map(|c| c.log_weight));
        let best = components
            .iter()
            .map(|c| c.log_weight)
            .fold(f64::NEG_INFINITY, f64::max);
        if let Some(p) = self.prune {
            components.retain(|c| c.log_weight >= best - p);
        }
        let norm = if self.prune.is_some() {
            logsumexp(components.iter().map(|c| c.log_weight))
        } else {
            norm
        };
        for c in &mut components {
            c.log_weight -= norm;
        }
        StepPredictive {
            num_states: self.num_states(),
            components,
        }
    }

    /// Next-step predictive mixture restricted to the features in `group`.
    pub fn predictive_mixture(&self, state: &ForwardState, group: &[usize]) -> Result<PredictiveMixture> {
        if group.is_empty() {
            return Err(Error::InvalidInput("feature group must be non-empty".into()));
        }
        if let Some(&q) = group.iter().find(|&&q| q >= self.num_features()) {
            return Err(Error::InvalidInput(format!("feature {q} out of range")));
        }
        Ok(self.step_predictive(state).restrict(group))
    }
}
