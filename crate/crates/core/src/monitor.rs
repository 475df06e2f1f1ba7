//! Adaptive sensor-group selection.
//!
//! At each step the monitor scores every group `m` of a [`GroupCatalog`] by
//! `L(m) = E[H(state | y^m)] + λ_m`, where the expectation is over the filter's next-step
//! predictive and is estimated by Monte Carlo. One set of full-dimensional draws is shared by
//! all groups of a step (common random numbers); each group sees its restriction.
//!
//! Observing more features never raises the expected posterior entropy, so a group that has a
//! superset in the catalog at no higher cost is dominated. Dominated groups are recorded but
//! never chosen, and each group's entropy estimate is raised to the largest estimate among its
//! catalog supersets before costs are added.

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{Filter, ForwardState, StepPredictive};
use crate::linalg::{self, LN_2PI};
use crate::model::SegmentedSeries;

/// Group sizes enumerated by the default catalog.
pub const DEFAULT_GROUP_SIZES: [usize; 3] = [4, 7, 10];

/// Default number of Monte Carlo samples per step.
pub const DEFAULT_MC_SAMPLES: usize = 50;

/// Feature groups with their energy costs.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCatalog {
    num_features: usize,
    groups: Vec<Vec<usize>>,
    costs: Vec<f64>,
    /// Catalog indices of groups containing each group, itself included.
    supersets: Vec<Vec<usize>>,
    dominated: Vec<bool>,
}

impl GroupCatalog {
    /// Catalog from explicit groups; each group is stored sorted.
    pub fn new(num_features: usize, groups: Vec<Vec<usize>>, costs: Vec<f64>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidInput("group catalog is empty".into()));
        }
        if groups.len() != costs.len() {
            return Err(Error::InvalidInput(format!(
                "{} groups but {} costs",
                groups.len(),
                costs.len()
            )));
        }
        let mut sorted = Vec::with_capacity(groups.len());
        for (g, mut group) in groups.into_iter().enumerate() {
            if group.is_empty() {
                return Err(Error::InvalidInput(format!("group {g} is empty")));
            }
            group.sort_unstable();
            if group.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidInput(format!("group {g} repeats a feature")));
            }
            if let Some(&q) = group.last().filter(|&&q| q >= num_features) {
                return Err(Error::InvalidInput(format!(
                    "group {g} references feature {q}, model has {num_features}"
                )));
            }
            sorted.push(group);
        }
        if let Some(c) = costs.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::InvalidInput(format!(
                "group cost {c} must be finite and non-negative"
            )));
        }

        let contains = |outer: &[usize], inner: &[usize]| inner.iter().all(|q| outer.binary_search(q).is_ok());
        let n = sorted.len();
        let supersets: Vec<Vec<usize>> = (0..n)
            .map(|m| (0..n).filter(|&s| contains(&sorted[s], &sorted[m])).collect())
            .collect();
        let dominated = (0..n)
            .map(|m| {
                supersets[m].iter().any(|&s| {
                    s != m
                        && (costs[s] < costs[m]
                            || (costs[s] == costs[m] && (sorted[s].len() > sorted[m].len() || s < m)))
                })
            })
            .collect();
        Ok(Self {
            num_features,
            groups: sorted,
            costs,
            supersets,
            dominated,
        })
    }

    /// All subsets of the given sizes, ordered by size then lexicographically, with costs
    /// `lambda * |m| / P`.
    pub fn from_sizes(num_features: usize, sizes: &[usize], lambda: f64) -> Result<Self> {
        let mut sizes = sizes.to_vec();
        sizes.sort_unstable();
        sizes.dedup();
        if sizes.is_empty() {
            return Err(Error::InvalidInput("no group sizes given".into()));
        }
        if let Some(&k) = sizes.iter().find(|&&k| k == 0 || k > num_features) {
            return Err(Error::InvalidInput(format!(
                "group size {k} outside 1..={num_features}"
            )));
        }
        let groups: Vec<Vec<usize>> = sizes.iter().flat_map(|&k| (0..num_features).combinations(k)).collect();
        let costs = groups
            .iter()
            .map(|g| lambda * g.len() as f64 / num_features as f64)
            .collect();
        Self::new(num_features, groups, costs)
    }

    /// Default catalog: sizes 4, 7 and 10, restricted to sizes that fit `num_features`.
    pub fn default_for(num_features: usize, lambda: f64) -> Result<Self> {
        let sizes: Vec<usize> = DEFAULT_GROUP_SIZES
            .iter()
            .copied()
            .filter(|&k| k <= num_features)
            .collect();
        Self::from_sizes(num_features, &sizes, lambda)
    }

    /// The single group of all features at zero cost.
    pub fn full(num_features: usize) -> Self {
        Self::new(num_features, vec![(0..num_features).collect()], vec![0.0]).expect("full group is valid")
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// Whether a catalog superset at no higher cost excludes group `m` from selection.
    pub fn is_dominated(&self, m: usize) -> bool {
        self.dominated[m]
    }
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Monte Carlo draws from one step's predictive, reusable across feature groups.
#[derive(Debug, Clone)]
pub struct MonteCarloStep {
    predictive: StepPredictive,
    /// `P × N`, one full-dimensional draw per column.
    draws: DMatrix<f64>,
    /// Rows of `draws`, contiguous per feature.
    draws_by_feature: Vec<Vec<f64>>,
}

impl MonteCarloStep {
    /// Draws `num_samples` rows from the predictive of the step after `state`, or of the first
    /// row when `state` is `None`. The stream is a pure function of `seed` and the step index.
    pub fn new(filter: &Filter<'_>, state: Option<&ForwardState>, num_samples: usize, seed: u64) -> Result<Self> {
        if num_samples == 0 {
            return Err(Error::InvalidInput(
                "Monte Carlo sample count must be at least 1".into(),
            ));
        }
        let (predictive, step) = match state {
            Some(s) => (filter.step_predictive(s), s.time_index()),
            None => (filter.initial_predictive(), 0),
        };
        let p = filter.num_features();
        let factors = predictive
            .components
            .iter()
            .map(|c| linalg::cholesky(c.covariance.clone(), "predictive component covariance").map(|ch| ch.l()))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step as u64);
        let mut draws = DMatrix::zeros(p, num_samples);
        let mut z = nalgebra::DVector::zeros(p);
        for i in 0..num_samples {
            let u: f64 = rng.random();
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let c = predictive.component_for(u);
            draws.set_column(i, &(&predictive.components[c].mean + &factors[c] * &z));
        }
        let draws_by_feature = draws.row_iter().map(|r| r.iter().copied().collect()).collect();
        Ok(Self {
            predictive,
            draws,
            draws_by_feature,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.draws.ncols()
    }

    pub fn predictive(&self) -> &StepPredictive {
        &self.predictive
    }

    /// Posterior state entropy after observing each draw restricted to `features`.
    pub fn sample_entropies(&self, features: &[usize]) -> Result<Vec<f64>> {
        let n = self.num_samples();
        let k = features.len();
        let a = self.predictive.num_states;
        let comps = &self.predictive.components;
        // Joint log-weight of each component and draw, one row per component.
        let mut joint = DMatrix::zeros(comps.len(), n);
        // Residuals of all draws, one contiguous row of length `n` per group feature.
        let mut x = vec![0.0; k * n];
        let mut sq = vec![0.0; n];
        for (ci, c) in comps.iter().enumerate() {
            let cov = linalg::submatrix(&c.covariance, features);
            let chol = linalg::cholesky(cov, "predictive component covariance")?;
            let l = chol.l_dirty();
            let logdet_half: f64 = (0..k).map(|i| l[(i, i)].ln()).sum();
            for (q, &f) in features.iter().enumerate() {
                let mu = c.mean[f];
                for (dst, &y) in x[q * n..(q + 1) * n].iter_mut().zip(&self.draws_by_feature[f]) {
                    *dst = y - mu;
                }
            }
            sq.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..k {
                let (head, tail) = x.split_at_mut((j + 1) * n);
                let v = &mut head[j * n..];
                let inv = 1.0 / l[(j, j)];
                for (vi, si) in v.iter_mut().zip(sq.iter_mut()) {
                    *vi *= inv;
                    *si += *vi * *vi;
                }
                for r in j + 1..k {
                    let lr = l[(r, j)];
                    let row = &mut tail[(r - j - 1) * n..(r - j) * n];
                    for (xr, &vi) in row.iter_mut().zip(v.iter()) {
                        *xr -= lr * vi;
                    }
                }
            }
            let base = c.log_weight - 0.5 * k as f64 * LN_2PI - logdet_half;
            for (i, &s2) in sq.iter().enumerate() {
                joint[(ci, i)] = base - 0.5 * s2;
            }
        }
        let mut per_state = vec![0.0; a];
        Ok(joint
            .column_iter()
            .map(|col| {
                let top = col.max();
                per_state.iter_mut().for_each(|v| *v = 0.0);
                for (c, &w) in comps.iter().zip(col.iter()) {
                    per_state[c.state] += (w - top).exp();
                }
                let total: f64 = per_state.iter().sum();
                let dist: Vec<f64> = per_state.iter().map(|v| v / total).collect();
                entropy(&dist)
            })
            .collect())
    }

    /// Mean and standard error of the posterior entropy over the draws.
    pub fn expected_entropy(&self, features: &[usize]) -> Result<(f64, f64)> {
        let h = self.sample_entropies(features)?;
        let n = h.len() as f64;
        let mean = h.iter().sum::<f64>() / n;
        if h.len() < 2 {
            return Ok((mean, 0.0));
        }
        let var = h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok((mean, (var / n).sqrt()))
    }
}

/// Monte Carlo estimate of the expected next-step state entropy when observing `group`, with
/// its standard error.
pub fn expected_entropy_mc(
    filter: &Filter<'_>,
    state: Option<&ForwardState>,
    group: &[usize],
    num_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_group(filter, group)?;
    MonteCarloStep::new(filter, state, num_samples, seed)?.expected_entropy(group)
}

/// Selection loss of catalog entry `m`: expected entropy estimate plus the group cost.
pub fn loss(
    filter: &Filter<'_>,
    state: Option<&ForwardState>,
    catalog: &GroupCatalog,
    m: usize,
    num_samples: usize,
    seed: u64,
) -> Result<f64> {
    if m >= catalog.len() {
        return Err(Error::InvalidInput(format!(
            "group index {m} outside catalog of {}",
            catalog.len()
        )));
    }
    let (h, _) = expected_entropy_mc(filter, state, &catalog.groups[m], num_samples, seed)?;
    Ok(h + catalog.costs[m])
}

fn check_group(filter: &Filter<'_>, group: &[usize]) -> Result<()> {
    if group.is_empty() {
        return Err(Error::InvalidInput("feature group must be non-empty".into()));
    }
    if let Some(&q) = group.iter().find(|&&q| q >= filter.num_features()) {
        return Err(Error::InvalidInput(format!("feature {q} out of range")));
    }
    Ok(())
}

/// Outcome of one selection step.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionRecord {
    /// Index of the row the group is selected for.
    pub time: usize,
    /// Catalog index of the chosen group.
    pub chosen: usize,
    pub features: Vec<usize>,
    /// Per-group loss after the superset adjustment; the chosen group attains the minimum.
    pub losses: Vec<f64>,
    /// Raw per-group Monte Carlo entropy estimates.
    pub entropy_estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub mc_samples: usize,
}

/// Chooses the group of minimum loss for the next row. Ties go to the smaller group, then the
/// lexicographically smaller one.
pub fn select_group(
    filter: &Filter<'_>,
    state: Option<&ForwardState>,
    catalog: &GroupCatalog,
    num_samples: usize,
    seed: u64,
) -> Result<SelectionRecord> {
    if catalog.num_features != filter.num_features() {
        return Err(Error::InvalidInput(format!(
            "catalog covers {} features, model has {}",
            catalog.num_features,
            filter.num_features()
        )));
    }
    let mc = MonteCarloStep::new(filter, state, num_samples, seed)?;
    let estimates = catalog
        .groups
        .par_iter()
        .map(|g| mc.expected_entropy(g))
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<f64> = (0..catalog.len())
        .map(|m| {
            let h = catalog.supersets[m]
                .iter()
                .map(|&s| estimates[s].0)
                .fold(f64::NEG_INFINITY, f64::max);
            h + catalog.costs[m]
        })
        .collect();
    let chosen = (0..catalog.len())
        .filter(|&m| !catalog.dominated[m])
        .min_by(|&x, &y| {
            losses[x]
                .total_cmp(&losses[y])
                .then(catalog.groups[x].len().cmp(&catalog.groups[y].len()))
                .then(catalog.groups[x].cmp(&catalog.groups[y]))
        })
        .expect("a finite catalog has an undominated group");
    Ok(SelectionRecord {
        time: state.map_or(0, |s| s.time_index()),
        chosen,
        features: catalog.groups[chosen].clone(),
        losses,
        entropy_estimates: estimates.iter().map(|e| e.0).collect(),
        std_errors: estimates.iter().map(|e| e.1).collect(),
        mc_samples: num_samples,
    })
}

/// Aggregate results of an adaptive run.
#[derive(Debug, Clone, Serialize)]
pub struct AdaptiveSummary {
    pub steps: usize,
    /// Fraction of steps whose MAP state matches the label.
    pub accuracy: f64,
    /// Mean fraction of features observed per step.
    pub avg_sensor_usage: f64,
    /// Mean state-posterior entropy after each update, in nats.
    pub avg_entropy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptiveRun {
    pub records: Vec<SelectionRecord>,
    pub map_states: Vec<usize>,
    pub summary: AdaptiveSummary,
}

/// Closed-loop monitoring of a labeled series: select a group, observe only its features,
/// update the filter and score the MAP state.
pub fn run_adaptive(
    filter: &Filter<'_>,
    series: &SegmentedSeries,
    catalog: &GroupCatalog,
    num_samples: usize,
    seed: u64,
) -> Result<AdaptiveRun> {
    let labels = series
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("adaptive run needs a labeled series".into()))?;
    if series.is_empty() {
        return Err(Error::InvalidInput("series is empty".into()));
    }
    let p = filter.num_features();
    let mut state: Option<ForwardState> = None;
    let mut records = Vec::with_capacity(series.len());
    let mut map_states = Vec::with_capacity(series.len());
    let (mut correct, mut usage, mut total_entropy) = (0usize, 0.0, 0.0);
    for t in 0..series.len() {
        let record = select_group(filter, state.as_ref(), catalog, num_samples, seed)?;
        let mut mask = vec![false; p];
        for &q in &record.features {
            mask[q] = true;
        }
        let available = series.mask_row(t);
        for (m, a) in mask.iter_mut().zip(&available) {
            *m &= *a;
        }
        let row = series.row(t);
        let next = match &state {
            None => filter.init(&row, &mask)?,
            Some(s) => filter.step(s, &row, &mask)?,
        };
        let map = next.map_state();
        correct += usize::from(map == labels[t]);
        usage += record.features.len() as f64 / p as f64;
        total_entropy += entropy(&next.state_posterior());
        map_states.push(map);
        records.push(record);
        state = Some(next);
    }
    let n = series.len() as f64;
    Ok(AdaptiveRun {
        records,
        map_states,
        summary: AdaptiveSummary {
            steps: series.len(),
            accuracy: correct as f64 / n,
            avg_sensor_usage: usage / n,
            avg_entropy: total_entropy / n,
        },
    })
}
