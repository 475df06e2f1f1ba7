//! Evaluation pipeline: preprocessing, known-state trajectory prediction, online recognition and
//! the energy-cost sweep.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{fit_pca, PcaProjection};
use crate::error::{Error, Result};
use crate::filter::Filter;
use crate::gp_predict::{posterior_mean_all, trajectory_metrics, Observed};
use crate::model::{SegmentedSeries, SwitchingGPModel};
use crate::monitor::{run_adaptive, GroupCatalog, DEFAULT_GROUP_SIZES, DEFAULT_MC_SAMPLES};

/// Settings shared by the experiment drivers.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    /// Observed to held-out ratio for trajectory prediction; `0.25` is one observed step per four
    /// held out.
    pub observed_ratio: f64,
    pub lambdas: Vec<f64>,
    pub mc_samples: usize,
    pub seed: u64,
    pub use_fft: bool,
    pub duration_cap: Option<usize>,
    pub group_sizes: Vec<usize>,
    pub pca_components: usize,
    pub whiten: bool,
    /// Keep only the first `k` series of each split.
    pub max_subjects: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            observed_ratio: 0.25,
            lambdas: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            mc_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
            use_fft: false,
            duration_cap: None,
            group_sizes: DEFAULT_GROUP_SIZES.to_vec(),
            pca_components: 10,
            whiten: true,
            max_subjects: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.observed_ratio > 0.0 && self.observed_ratio < 1.0) {
            return Err(Error::InvalidInput(format!(
                "observed ratio {} must lie in (0, 1)",
                self.observed_ratio
            )));
        }
        if self.lambdas.is_empty() {
            return Err(Error::InvalidInput("lambda grid is empty".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !l.is_finite() || **l < 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda {l} must be finite and non-negative"
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidInput(
                "Monte Carlo sample count must be at least 1".into(),
            ));
        }
        if self.group_sizes.is_empty() {
            return Err(Error::InvalidInput("no group sizes given".into()));
        }
        Ok(())
    }
}

/// Keeps the series of the first `k` distinct subjects when a limit is given. Session ids of
/// the form `subject-k` count toward their subject.
pub fn limit_subjects(series: Vec<SegmentedSeries>, k: Option<usize>) -> Vec<SegmentedSeries> {
    let Some(k) = k else { return series };
    let subject = |s: &SegmentedSeries| s.subject_id.split('-').next().unwrap_or_default().to_string();
    let mut kept: Vec<String> = Vec::new();
    series
        .into_iter()
        .filter(|s| {
            let id = subject(s);
            if kept.contains(&id) {
                true
            } else if kept.len() < k {
                kept.push(id);
                true
            } else {
                false
            }
        })
        .collect()
}

/// Applies a projection to every series, keeping labels and ids.
pub fn project_series(pca: &PcaProjection, series: &[SegmentedSeries]) -> Result<Vec<SegmentedSeries>> {
    series
        .iter()
        .map(|s| {
            if !s.is_fully_observed() {
                return Err(Error::InvalidInput(format!(
                    "series {} has missing values",
                    s.subject_id
                )));
            }
            SegmentedSeries::new(pca.apply(&s.observations)?, s.labels.clone(), s.subject_id.clone())
        })
        .collect()
}

/// Fits the projection on the training rows only and applies it to both splits.
pub fn preprocess(
    train: &[SegmentedSeries],
    test: &[SegmentedSeries],
    components: usize,
    whiten: bool,
) -> Result<(PcaProjection, Vec<SegmentedSeries>, Vec<SegmentedSeries>)> {
    let rows: usize = train.iter().map(|s| s.len()).sum();
    let p = train
        .first()
        .ok_or_else(|| Error::InsufficientData("no training series".into()))?
        .num_features();
    let mut stacked = DMatrix::zeros(rows, p);
    let mut r = 0;
    for s in train {
        stacked.rows_mut(r, s.len()).copy_from(&s.observations);
        r += s.len();
    }
    let pca = fit_pca(&stacked, components, whiten)?;
    let train = project_series(&pca, train)?;
    let test = project_series(&pca, test)?;
    Ok((pca, train, test))
}

/// Whether in-segment offset `t` is observed under an observed:held-out ratio.
pub fn is_observed_offset(t: usize, ratio: f64) -> bool {
    let f = ratio / (1.0 + ratio);
    let cur = (t as f64 * f + 1e-9).floor();
    let prev = ((t as f64 - 1.0) * f + 1e-9).floor();
    cur > prev
}

#[derive(Debug, Clone, Serialize)]
pub struct StateMetrics {
    pub state: usize,
    pub mse: f64,
    pub abs: f64,
    /// Held-out entries scored.
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryReport {
    pub mse: f64,
    pub abs: f64,
    /// Error of predicting each held-out entry by its state mean.
    pub baseline_mse: f64,
    pub per_state: Vec<StateMetrics>,
}

/// Known-state trajectory prediction: within each labeled segment, observe the steps selected
/// by the ratio (all features), predict the rest from the state's GP posterior and score them.
pub fn experiment_trajectory(
    model: &SwitchingGPModel,
    series: &[SegmentedSeries],
    ratio: f64,
) -> Result<TrajectoryReport> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!(
            "observed ratio {ratio} must lie in (0, 1)"
        )));
    }
    let a = model.num_states();
    let p = model.num_features();
    let mut jobs = Vec::new();
    for s in series {
        if s.num_features() != p {
            return Err(Error::InvalidInput(format!(
                "series {} has {} features, model expects {p}",
                s.subject_id,
                s.num_features()
            )));
        }
        if s.labels.is_none() {
            return Err(Error::InvalidInput(format!("series {} is unlabeled", s.subject_id)));
        }
        for seg in s.segments() {
            if seg.state >= a {
                return Err(Error::InvalidInput(format!("label {} outside model states", seg.state)));
            }
            jobs.push((s, seg));
        }
    }
    // (state, squared error sum, absolute error sum, baseline squared sum, count)
    let results = jobs
        .par_iter()
        .map(|(s, seg)| -> Result<(usize, f64, f64, f64, usize)> {
            let emission = &model.emissions[seg.state];
            let window = s.observations.rows(seg.start, seg.duration);
            let mut observed = Vec::new();
            let mut queries = Vec::new();
            for t in 0..seg.duration {
                if is_observed_offset(t, ratio) {
                    for f in 0..p {
                        if s.mask[(seg.start + t, f)] {
                            observed.push(Observed {
                                time: t,
                                feature: f,
                                value: window[(t, f)],
                            });
                        }
                    }
                } else {
                    queries.push(t);
                }
            }
            if queries.is_empty() {
                return Ok((seg.state, 0.0, 0.0, 0.0, 0));
            }
            let pred = posterior_mean_all(emission, &model.noise, &observed, &queries)?;
            let truth = DMatrix::from_fn(queries.len(), p, |i, f| window[(queries[i], f)]);
            let mask = DMatrix::from_fn(queries.len(), p, |i, f| s.mask[(seg.start + queries[i], f)]);
            let baseline = DMatrix::from_fn(queries.len(), p, |_, f| emission.mean[f]);
            let count = mask.iter().filter(|&&m| m).count();
            if count == 0 {
                return Ok((seg.state, 0.0, 0.0, 0.0, 0));
            }
            let (mse, abs) = trajectory_metrics(&pred, &truth, &mask)?;
            let (base, _) = trajectory_metrics(&baseline, &truth, &mask)?;
            let n = count as f64;
            Ok((seg.state, mse * n, abs * n, base * n, count))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sums = vec![(0.0, 0.0, 0usize); a];
    let (mut se, mut ae, mut be, mut total) = (0.0, 0.0, 0.0, 0usize);
    for (state, s2, s1, b2, n) in results {
        sums[state].0 += s2;
        sums[state].1 += s1;
        sums[state].2 += n;
        se += s2;
        ae += s1;
        be += b2;
        total += n;
    }
    if total == 0 {
        return Err(Error::EmptyMask);
    }
    let t = total as f64;
    Ok(TrajectoryReport {
        mse: se / t,
        abs: ae / t,
        baseline_mse: be / t,
        per_state: sums
            .iter()
            .enumerate()
            .filter(|(_, s)| s.2 > 0)
            .map(|(state, s)| StateMetrics {
                state,
                mse: s.0 / s.2 as f64,
                abs: s.1 / s.2 as f64,
                count: s.2,
            })
            .collect(),
    })
}

/// One filtered step of a recognition run.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub series: String,
    pub time: usize,
    pub label: usize,
    pub predicted: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RecognitionReport {
    pub accuracy: f64,
    pub steps: usize,
    /// `confusion[true][predicted]` step counts.
    pub confusion: Vec<Vec<usize>>,
    /// Mean steps from a true switch to the first step predicting the new state, over detected
    /// switches; `None` when no switch was detected.
    pub mean_switch_lag: Option<f64>,
    pub switches: usize,
    pub missed_switches: usize,
    pub trajectory: Vec<StepRecord>,
}

/// Online MAP filtering with all features observed.
pub fn experiment_recognition(model: &SwitchingGPModel, series: &[SegmentedSeries]) -> Result<RecognitionReport> {
    let filter = Filter::new(model)?;
    let a = model.num_states();
    let per_series = series
        .par_iter()
        .map(|s| -> Result<Vec<StepRecord>> {
            let labels = s
                .labels
                .as_ref()
                .ok_or_else(|| Error::InvalidInput(format!("series {} is unlabeled", s.subject_id)))?;
            if let Some(&l) = labels.iter().find(|&&l| l >= a) {
                return Err(Error::InvalidInput(format!("label {l} outside model states")));
            }
            let mut out = Vec::with_capacity(s.len());
            let mut state = None;
            for t in 0..s.len() {
                let row = s.row(t);
                let mask = s.mask_row(t);
                let next = match &state {
                    None => filter.init(&row, &mask)?,
                    Some(prev) => filter.step(prev, &row, &mask)?,
                };
                let post = next.state_posterior();
                let predicted = next.map_state();
                out.push(StepRecord {
                    series: s.subject_id.clone(),
                    time: t,
                    label: labels[t],
                    predicted,
                    confidence: post[predicted],
                });
                state = Some(next);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut confusion = vec![vec![0usize; a]; a];
    let (mut correct, mut steps) = (0usize, 0usize);
    let (mut lag_sum, mut detected, mut switches) = (0usize, 0usize, 0usize);
    for records in &per_series {
        for r in records {
            confusion[r.label][r.predicted] += 1;
            correct += usize::from(r.label == r.predicted);
            steps += 1;
        }
        for t in 1..records.len() {
            if records[t].label == records[t - 1].label {
                continue;
            }
            switches += 1;
            let target = records[t].label;
            let lag = records[t..]
                .iter()
                .take_while(|r| r.label == target)
                .position(|r| r.predicted == target);
            if let Some(l) = lag {
                lag_sum += l;
                detected += 1;
            }
        }
    }
    if steps == 0 {
        return Err(Error::InvalidInput("no steps to score".into()));
    }
    Ok(RecognitionReport {
        accuracy: correct as f64 / steps as f64,
        steps,
        confusion,
        mean_switch_lag: (detected > 0).then(|| lag_sum as f64 / detected as f64),
        switches,
        missed_switches: switches - detected,
        trajectory: per_series.into_iter().flatten().collect(),
    })
}

/// One row of the energy-cost trade-off table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub accuracy: f64,
    pub avg_sensor_usage: f64,
    pub avg_entropy: f64,
    pub runtime_s: f64,
}

/// Chosen catalog index per step, per series, for one lambda.
pub type DecisionTrace = Vec<Vec<usize>>;

/// Closed-loop monitoring at each lambda of the grid. Groups are all subsets of
/// `group_sizes` with cost `lambda * |m| / P`.
pub fn experiment_sweep(
    model: &SwitchingGPModel,
    series: &[SegmentedSeries],
    lambdas: &[f64],
    group_sizes: &[usize],
    mc_samples: usize,
    seed: u64,
) -> Result<(Vec<SweepRow>, Vec<DecisionTrace>)> {
    if lambdas.is_empty() {
        return Err(Error::InvalidInput("lambda grid is empty".into()));
    }
    let filter = Filter::new(model)?;
    let p = model.num_features();
    let results = lambdas
        .par_iter()
        .map(|&lambda| -> Result<(SweepRow, DecisionTrace)> {
            let started = Instant::now();
            let catalog = GroupCatalog::from_sizes(p, group_sizes, lambda)?;
            let runs = series
                .iter()
                .map(|s| run_adaptive(&filter, s, &catalog, mc_samples, seed))
                .collect::<Result<Vec<_>>>()?;
            let steps: usize = runs.iter().map(|r| r.summary.steps).sum();
            let weighted = |f: fn(&crate::monitor::AdaptiveSummary) -> f64| {
                runs.iter().map(|r| f(&r.summary) * r.summary.steps as f64).sum::<f64>() / steps as f64
            };
            let row = SweepRow {
                lambda,
                accuracy: weighted(|s| s.accuracy),
                avg_sensor_usage: weighted(|s| s.avg_sensor_usage),
                avg_entropy: weighted(|s| s.avg_entropy),
                runtime_s: started.elapsed().as_secs_f64(),
            };
            let trace = runs
                .iter()
                .map(|r| r.records.iter().map(|x| x.chosen).collect())
                .collect();
            Ok((row, trace))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results.into_iter().unzip())
}
