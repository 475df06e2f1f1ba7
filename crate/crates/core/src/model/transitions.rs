use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::series::Segment;

/// Row-stochastic state-switch matrix with an exactly zero diagonal; dwell time is carried by
/// the duration distributions instead of self-transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    probs: DMatrix<f64>,
}

impl TransitionMatrix {
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        let a = probs.nrows();
        if a == 0 || probs.ncols() != a {
            return Err(Error::InvalidInput("transition matrix must be square".into()));
        }
        for i in 0..a {
            if probs[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "transition matrix diagonal must be 0, entry ({i},{i}) = {}",
                    probs[(i, i)]
                )));
            }
            if probs.row(i).iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = probs.row(i).iter().sum();
            // A single-state chain has no outgoing transitions at all.
            if a > 1 && (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("row {i} sums to {sum}, expected 1")));
            }
        }
        Ok(Self { probs })
    }

    /// Uniform switching over the other states.
    pub fn uniform(num_states: usize) -> Self {
        let off = if num_states > 1 {
            1.0 / (num_states - 1) as f64
        } else {
            0.0
        };
        Self {
            probs: DMatrix::from_fn(num_states, num_states, |i, j| if i == j { 0.0 } else { off }),
        }
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.probs[(from, to)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.probs
    }
}

/// A state whose row had to be backfilled because it never switched in the training data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionWarning {
    pub state: usize,
}

/// Switch counts `n_ij` over consecutive segments of each list. Lists are independent subjects:
/// no transition is counted across list boundaries.
pub fn transition_counts<'a>(
    num_states: usize,
    segment_lists: impl IntoIterator<Item = &'a [Segment]>,
) -> Result<DMatrix<f64>> {
    let mut counts = DMatrix::<f64>::zeros(num_states, num_states);
    for list in segment_lists {
        for pair in list.windows(2) {
            let (from, to) = (pair[0].state, pair[1].state);
            if from >= num_states || to >= num_states {
                return Err(Error::InvalidInput(format!(
                    "state index out of range in transition {from}->{to}"
                )));
            }
            if from != to {
                counts[(from, to)] += 1.0;
            }
        }
    }
    Ok(counts)
}

/// Counts state switches across all segment lists and normalizes each row.
///
/// `allowed` restricts the uniform backfill targets (e.g. to trained states); `None` allows all.
pub fn fit_transitions<'a>(
    num_states: usize,
    segment_lists: impl IntoIterator<Item = &'a [Segment]>,
    allowed: Option<&[bool]>,
) -> Result<(TransitionMatrix, Vec<TransitionWarning>)> {
    let counts = transition_counts(num_states, segment_lists)?;
    let mut warnings = Vec::new();
    let mut probs = DMatrix::zeros(num_states, num_states);
    for i in 0..num_states {
        let total: f64 = counts.row(i).iter().sum();
        if total > 0.0 {
            for j in 0..num_states {
                probs[(i, j)] = counts[(i, j)] / total;
            }
        } else if num_states > 1 {
            let targets: Vec<usize> = (0..num_states)
                .filter(|&j| j != i && allowed.is_none_or(|a| a[j]))
                .collect();
            let targets = if targets.is_empty() {
                (0..num_states).filter(|&j| j != i).collect()
            } else {
                targets
            };
            let w = 1.0 / targets.len() as f64;
            for j in targets {
                probs[(i, j)] = w;
            }
            log::warn!("state {} has no outgoing transitions; row backfilled uniformly", i + 1);
            warnings.push(TransitionWarning { state: i });
        }
    }
    // Renormalize so rows are stochastic to the last ulp.
    for i in 0..num_states {
        let s: f64 = probs.row(i).iter().sum();
        if s > 0.0 {
            for j in 0..num_states {
                probs[(i, j)] /= s;
            }
        }
    }
    Ok((TransitionMatrix::new(probs)?, warnings))
}
