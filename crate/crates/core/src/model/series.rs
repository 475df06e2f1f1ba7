use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A maximal run of one state: `start` and `duration` are in time steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub state: usize,
    pub start: usize,
    pub duration: usize,
}

/// Run-length encodes a label sequence into maximal constant segments.
pub fn segment_series(labels: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (t, &state) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(seg) if seg.state == state => seg.duration += 1,
            _ => out.push(Segment {
                state,
                start: t,
                duration: 1,
            }),
        }
    }
    out
}

/// Uniformly sampled multivariate observations of one subject.
///
/// Labels are zero-based state indices. `mask[(t, p)]` is true when feature `p` was observed
/// at step `t`; unobserved values are ignored wherever they appear.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedSeries {
    pub observations: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
    pub mask: DMatrix<bool>,
    pub subject_id: String,
    pub step: f64,
}

impl SegmentedSeries {
    /// Fully observed series.
    pub fn new(observations: DMatrix<f64>, labels: Option<Vec<usize>>, subject_id: impl Into<String>) -> Result<Self> {
        let mask = DMatrix::from_element(observations.nrows(), observations.ncols(), true);
        Self::with_mask(observations, labels, mask, subject_id)
    }

    pub fn with_mask(
        observations: DMatrix<f64>,
        labels: Option<Vec<usize>>,
        mask: DMatrix<bool>,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        if mask.shape() != observations.shape() {
            return Err(Error::InvalidInput(format!(
                "mask shape {:?} does not match observations {:?}",
                mask.shape(),
                observations.shape()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != observations.nrows() {
                return Err(Error::InvalidInput(format!(
                    "{} labels for {} rows",
                    l.len(),
                    observations.nrows()
                )));
            }
        }
        for t in 0..observations.nrows() {
            for p in 0..observations.ncols() {
                if mask[(t, p)] && !observations[(t, p)].is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "observed value at ({t},{p}) is not finite"
                    )));
                }
            }
        }
        Ok(Self {
            observations,
            labels,
            mask,
            subject_id: subject_id.into(),
            step: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.nrows() == 0
    }

    pub fn num_features(&self) -> usize {
        self.observations.ncols()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Segments induced by the labels; empty when unlabeled.
    pub fn segments(&self) -> Vec<Segment> {
        self.labels.as_deref().map(segment_series).unwrap_or_default()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.observations.row(t).iter().copied().collect()
    }

    pub fn mask_row(&self, t: usize) -> Vec<bool> {
        self.mask.row(t).iter().copied().collect()
    }
}
