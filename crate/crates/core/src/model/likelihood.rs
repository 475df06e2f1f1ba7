//! Population negative log-likelihood of labeled data and its gradient with respect to the
//! unconstrained emission parameters.
//!
//! Fully observed segments are evaluated exactly through the joint eigendecomposition of the
//! temporal Gram matrix and the noise-whitened task covariance, which costs one `n × n`
//! eigendecomposition per distinct (state, length) pair. Partially observed segments fall back
//! to dense marginalization.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::circulant::fast_segment_loglik;
use crate::error::{Error, Result};
use crate::gp_predict::masked_segment_loglik;
use crate::kernels::{gram_matrix, MaternKernel, NoiseModel, TaskCovariance};
use crate::linalg::LN_2PI;
use crate::model::params::SwitchingGPModel;
use crate::model::series::SegmentedSeries;

/// Whether a parameter block is shared by all states or owned by each state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharing {
    Shared,
    PerState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterSharing {
    pub temporal: Sharing,
    pub task: Sharing,
}

impl Default for ParameterSharing {
    fn default() -> Self {
        Self {
            temporal: Sharing::PerState,
            task: Sharing::Shared,
        }
    }
}

/// Residual matrix (`n × P`, observations minus state mean) of one labeled segment.
#[derive(Debug, Clone)]
pub struct SegmentResidual {
    pub state: usize,
    pub residual: DMatrix<f64>,
}

/// Residuals of every labeled segment in `data`, in data order.
pub fn segment_residuals(model: &SwitchingGPModel, data: &[SegmentedSeries]) -> Result<Vec<SegmentResidual>> {
    let mut out = Vec::new();
    for series in data {
        if !series.is_fully_observed() {
            return Err(Error::InvalidInput(format!(
                "training series {} has unobserved entries",
                series.subject_id
            )));
        }
        for seg in series.segments() {
            out.push(SegmentResidual {
                state: seg.state,
                residual: residual_block(model, series, seg.state, seg.start, seg.duration)?,
            });
        }
    }
    Ok(out)
}

fn residual_block(
    model: &SwitchingGPModel,
    series: &SegmentedSeries,
    state: usize,
    start: usize,
    len: usize,
) -> Result<DMatrix<f64>> {
    if state >= model.num_states() {
        return Err(Error::InvalidInput(format!(
            "label {} exceeds the model's {} states",
            state + 1,
            model.num_states()
        )));
    }
    if series.num_features() != model.num_features() {
        return Err(Error::InvalidInput(format!(
            "series {} has {} features, model expects {}",
            series.subject_id,
            series.num_features(),
            model.num_features()
        )));
    }
    let mean = &model.emissions[state].mean;
    let mut r = series.observations.rows(start, len).into_owned();
    for mut row in r.row_iter_mut() {
        row -= mean.transpose();
    }
    Ok(r)
}

/// Eigendecomposition of a temporal Gram matrix plus what the gradient needs.
struct TemporalEigen {
    gram: DMatrix<f64>,
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    d_gram: DMatrix<f64>,
    /// Diagonal of `Uᵀ (∂K/∂log ℓ) U`.
    d_diag: DVector<f64>,
}

impl TemporalEigen {
    fn new(kernel: &MaternKernel, n: usize, with_grad: bool) -> Self {
        let gram = gram_matrix(kernel, n - 1);
        let eig = SymmetricEigen::new(gram.clone());
        let (d_gram, d_diag) = if with_grad {
            let dk: Vec<f64> = (0..n).map(|l| kernel.d_log_lengthscale(l as f64)).collect();
            let d_gram = DMatrix::from_fn(n, n, |i, j| dk[i.abs_diff(j)]);
            let rotated = &d_gram * &eig.eigenvectors;
            let d_diag = DVector::from_fn(n, |t, _| eig.eigenvectors.column(t).dot(&rotated.column(t)));
            (d_gram, d_diag)
        } else {
            (DMatrix::zeros(0, 0), DVector::zeros(0))
        };
        Self {
            gram,
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
            d_gram,
            d_diag,
        }
    }
}

/// Eigendecomposition of `D^{-1/2} K_task D^{-1/2}`.
struct TaskEigen {
    k_task: DMatrix<f64>,
    inv_sqrt_noise: DVector<f64>,
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl TaskEigen {
    fn new(task: &TaskCovariance, noise: &NoiseModel) -> Self {
        let k_task = task.assemble();
        let inv_sqrt_noise = DVector::from_iterator(noise.dim(), noise.variances().iter().map(|d| 1.0 / d.sqrt()));
        let p = k_task.nrows();
        let mut b = DMatrix::from_fn(p, p, |i, j| k_task[(i, j)] * inv_sqrt_noise[i] * inv_sqrt_noise[j]);
        crate::linalg::symmetrize(&mut b);
        let eig = SymmetricEigen::new(b);
        Self {
            k_task,
            inv_sqrt_noise,
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }
}

#[derive(Debug, Clone)]
struct SegmentGradient {
    d_log_variance: f64,
    d_log_lengthscale: f64,
    /// `∂NLL/∂K_task` (symmetric).
    g_task: DMatrix<f64>,
    /// `∂NLL/∂d_p`.
    d_noise: DVector<f64>,
}

fn kronecker_segment(
    temporal: &TemporalEigen,
    task: &TaskEigen,
    noise: &NoiseModel,
    residual: &DMatrix<f64>,
    state: usize,
    with_grad: bool,
) -> Result<(f64, Option<SegmentGradient>)> {
    let (n, p) = residual.shape();
    let lt = &temporal.values;
    let lb = &task.values;
    let denom = DMatrix::from_fn(n, p, |t, a| lt[t] * lb[a] + 1.0);
    if denom.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::NonPositiveDefinite(format!(
            "emission covariance of state {}",
            state + 1
        )));
    }
    let mut whitened = residual.clone();
    for q in 0..p {
        whitened.column_mut(q).scale_mut(task.inv_sqrt_noise[q]);
    }
    let m = temporal.vectors.transpose() * whitened * &task.vectors;
    let w = m.component_div(&denom);
    let quadratic = m.dot(&w);
    let logdet =
        n as f64 * noise.variances().iter().map(|d| d.ln()).sum::<f64>() + denom.iter().map(|v| v.ln()).sum::<f64>();
    let nll = 0.5 * (logdet + quadratic + (n * p) as f64 * LN_2PI);
    if !with_grad {
        return Ok((nll, None));
    }

    // A = Σ⁻¹ r in matrix form.
    let mut a = &temporal.vectors * w * task.vectors.transpose();
    for q in 0..p {
        a.column_mut(q).scale_mut(task.inv_sqrt_noise[q]);
    }
    let inv_denom = denom.map(|v| 1.0 / v);
    // v_t = Σ_a λ_B,a / (λ_T,t λ_B,a + 1), w_a = Σ_t λ_T,t / (...), c_a = Σ_t 1 / (...).
    let v = DVector::from_fn(n, |t, _| (0..p).map(|b| lb[b] * inv_denom[(t, b)]).sum::<f64>());
    let wa = DVector::from_fn(p, |b, _| (0..n).map(|t| lt[t] * inv_denom[(t, b)]).sum::<f64>());
    let ca = DVector::from_fn(p, |b, _| inv_denom.column(b).sum());

    let a_ky = &a * &task.k_task;
    let kt_a = &temporal.gram * &a;
    let d_log_variance = 0.5 * (v.dot(lt) - kt_a.dot(&a_ky));
    let dk_a = &temporal.d_gram * &a;
    let d_log_lengthscale = 0.5 * (v.dot(&temporal.d_diag) - dk_a.dot(&a_ky));

    let mut scaled = task.vectors.clone();
    for r in 0..p {
        scaled.row_mut(r).scale_mut(task.inv_sqrt_noise[r]);
    }
    let trace_part = &scaled * DMatrix::from_diagonal(&wa) * scaled.transpose();
    let mut g_task = 0.5 * (trace_part - a.transpose() * &kt_a);
    crate::linalg::symmetrize(&mut g_task);

    let d_noise = DVector::from_fn(p, |q, _| {
        let inv_d = task.inv_sqrt_noise[q] * task.inv_sqrt_noise[q];
        let trace = (0..p).map(|b| task.vectors[(q, b)].powi(2) * ca[b]).sum::<f64>() * inv_d;
        0.5 * (trace - a.column(q).norm_squared())
    });
    Ok((
        nll,
        Some(SegmentGradient {
            d_log_variance,
            d_log_lengthscale,
            g_task,
            d_noise,
        }),
    ))
}

/// Exact log-density of a fully observed `n × P` residual matrix under
/// `K_task ⊗ K_time + D ⊗ I`, via eigendecomposition instead of a dense factorization.
pub fn kronecker_segment_loglik(
    kernel: &MaternKernel,
    task: &TaskCovariance,
    noise: &NoiseModel,
    residual: &DMatrix<f64>,
) -> Result<f64> {
    if residual.nrows() == 0 {
        return Ok(0.0);
    }
    let te = TemporalEigen::new(kernel, residual.nrows(), false);
    let ke = TaskEigen::new(task, noise);
    kronecker_segment(&te, &ke, noise, residual, 0, false).map(|(nll, _)| -nll)
}

/// Sum over subjects and segments of the Gaussian negative log-density of the residuals.
///
/// With `use_fft`, fully observed segments use the approximate circulant path and fall back to
/// the exact path when an embedding block is not positive definite; it requires full masks.
/// Subjects are evaluated in parallel and summed sequentially in data order.
pub fn negative_loglik(model: &SwitchingGPModel, data: &[SegmentedSeries], use_fft: bool) -> Result<f64> {
    let per_subject: Vec<Result<f64>> = data
        .par_iter()
        .map(|series| subject_negative_loglik(model, series, use_fft))
        .collect();
    let mut total = 0.0;
    for v in per_subject {
        total += v?;
    }
    Ok(total)
}

fn subject_negative_loglik(model: &SwitchingGPModel, series: &SegmentedSeries, use_fft: bool) -> Result<f64> {
    if series.labels.is_none() {
        return Err(Error::InvalidInput(format!(
            "series {} has no labels",
            series.subject_id
        )));
    }
    let mut total = 0.0;
    for seg in series.segments() {
        let residual = residual_block(model, series, seg.state, seg.start, seg.duration)?;
        let mask = series.mask.rows(seg.start, seg.duration).into_owned();
        let e = &model.emissions[seg.state];
        let name = |err: Error| match err {
            Error::NonPositiveDefinite(_) => {
                Error::NonPositiveDefinite(format!("emission covariance of state {}", seg.state + 1))
            }
            other => other,
        };
        let full = mask.iter().all(|&m| m);
        let ll = if full && use_fft {
            match fast_segment_loglik(&e.temporal, &e.task, &model.noise, &residual) {
                Ok(v) => v,
                Err(Error::SingularEmbedding { .. }) => {
                    kronecker_segment_loglik(&e.temporal, &e.task, &model.noise, &residual).map_err(name)?
                }
                Err(err) => return Err(name(err)),
            }
        } else if full {
            kronecker_segment_loglik(&e.temporal, &e.task, &model.noise, &residual).map_err(name)?
        } else if use_fft {
            return Err(Error::InvalidInput(format!(
                "the FFT path needs fully observed segments; series {} has gaps",
                series.subject_id
            )));
        } else {
            masked_segment_loglik(&e.temporal, &e.task, &model.noise, &residual, &mask).map_err(name)?
        };
        total -= ll;
    }
    Ok(total)
}

/// Index map between a model's trainable emission parameters and an unconstrained vector.
///
/// Layout: per temporal group `[log σ² (if free), log ℓ]`, then per task group the
/// lower-triangular entries of `L` row by row with the diagonal log-transformed, then
/// `log d_p` unless noise is frozen.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub sharing: ParameterSharing,
    pub freeze_noise: bool,
    num_features: usize,
    /// For each state: its temporal and task group, or `None` when untrained.
    temporal_group: Vec<Option<usize>>,
    task_group: Vec<Option<usize>>,
    /// Representative state of each group.
    temporal_reps: Vec<usize>,
    task_reps: Vec<usize>,
    variance_idx: Vec<Option<usize>>,
    lengthscale_idx: Vec<usize>,
    task_idx: Vec<usize>,
    noise_idx: Option<usize>,
    len: usize,
}

impl ParamLayout {
    /// Builds the layout for the trained states of `model`.
    ///
    /// The overall scale of `K_task ⊗ K_time` is not identifiable, so temporal variances are
    /// fixed where a task covariance already carries the scale: every variance when task
    /// covariances are per state or the temporal kernel is shared, and the first trained
    /// state's variance otherwise.
    pub fn new(model: &SwitchingGPModel, sharing: ParameterSharing, freeze_noise: bool) -> Self {
        let a = model.num_states();
        let p = model.num_features();
        let group = |mode: Sharing, reps: &mut Vec<usize>| -> Vec<Option<usize>> {
            let mut out = vec![None; a];
            for j in (0..a).filter(|&j| model.trained[j]) {
                out[j] = Some(match mode {
                    Sharing::Shared => {
                        if reps.is_empty() {
                            reps.push(j);
                        }
                        0
                    }
                    Sharing::PerState => {
                        reps.push(j);
                        reps.len() - 1
                    }
                });
            }
            out
        };
        let mut temporal_reps = Vec::new();
        let mut task_reps = Vec::new();
        let temporal_group = group(sharing.temporal, &mut temporal_reps);
        let task_group = group(sharing.task, &mut task_reps);

        let free_variance = sharing.task == Sharing::Shared && sharing.temporal == Sharing::PerState;
        let mut len = 0;
        let mut variance_idx = Vec::new();
        let mut lengthscale_idx = Vec::new();
        for g in 0..temporal_reps.len() {
            if free_variance && g > 0 {
                variance_idx.push(Some(len));
                len += 1;
            } else {
                variance_idx.push(None);
            }
            lengthscale_idx.push(len);
            len += 1;
        }
        let mut task_idx = Vec::new();
        for _ in 0..task_reps.len() {
            task_idx.push(len);
            len += p * (p + 1) / 2;
        }
        let noise_idx = if freeze_noise {
            None
        } else {
            let i = len;
            len += p;
            Some(i)
        };
        Self {
            sharing,
            freeze_noise,
            num_features: p,
            temporal_group,
            task_group,
            temporal_reps,
            task_reps,
            variance_idx,
            lengthscale_idx,
            task_idx,
            noise_idx,
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Current parameter values of `model` in unconstrained coordinates.
    pub fn pack(&self, model: &SwitchingGPModel) -> Vec<f64> {
        let mut x = vec![0.0; self.len];
        for (g, &j) in self.temporal_reps.iter().enumerate() {
            let k = &model.emissions[j].temporal;
            if let Some(i) = self.variance_idx[g] {
                x[i] = k.variance().ln();
            }
            x[self.lengthscale_idx[g]] = k.lengthscale().ln();
        }
        let p = self.num_features;
        for (g, &j) in self.task_reps.iter().enumerate() {
            let l = model.emissions[j].task.cholesky();
            let mut i = self.task_idx[g];
            for r in 0..p {
                for c in 0..=r {
                    x[i] = if r == c { l[(r, c)].ln() } else { l[(r, c)] };
                    i += 1;
                }
            }
        }
        if let Some(i0) = self.noise_idx {
            for (q, d) in model.noise.variances().iter().enumerate() {
                x[i0 + q] = d.ln();
            }
        }
        x
    }

    /// Copy of `template` with the trainable parameters replaced by `x`.
    pub fn unpack(&self, template: &SwitchingGPModel, x: &[f64]) -> Result<SwitchingGPModel> {
        if x.len() != self.len {
            return Err(Error::InvalidInput(format!(
                "parameter vector has {} entries, layout expects {}",
                x.len(),
                self.len
            )));
        }
        let p = self.num_features;
        let mut model = template.clone();
        let mut tasks = Vec::with_capacity(self.task_reps.len());
        for g in 0..self.task_reps.len() {
            let mut l = DMatrix::zeros(p, p);
            let mut i = self.task_idx[g];
            for r in 0..p {
                for c in 0..=r {
                    l[(r, c)] = if r == c { x[i].exp() } else { x[i] };
                    i += 1;
                }
            }
            tasks.push(TaskCovariance::new(l)?);
        }
        for j in 0..model.num_states() {
            let (Some(tg), Some(kg)) = (self.temporal_group[j], self.task_group[j]) else {
                continue;
            };
            let old = model.emissions[j].temporal;
            let variance = match self.variance_idx[tg] {
                Some(i) => x[i].exp(),
                None => template.emissions[self.temporal_reps[tg]].temporal.variance(),
            };
            model.emissions[j].temporal =
                MaternKernel::new(variance, x[self.lengthscale_idx[tg]].exp(), old.smoothness())?;
            model.emissions[j].task = tasks[kg].clone();
        }
        if let Some(i0) = self.noise_idx {
            model.noise = NoiseModel::new(x[i0..i0 + p].iter().map(|v| v.exp()).collect())?;
        }
        Ok(model)
    }
}

/// Negative log-likelihood of fixed training residuals as a function of the unconstrained
/// emission parameters, with analytic gradient.
pub struct EmissionObjective {
    template: SwitchingGPModel,
    layout: ParamLayout,
    segments: Vec<SegmentResidual>,
}

impl EmissionObjective {
    pub fn new(
        model: &SwitchingGPModel,
        data: &[SegmentedSeries],
        sharing: ParameterSharing,
        freeze_noise: bool,
    ) -> Result<Self> {
        let segments = segment_residuals(model, data)?;
        if segments.is_empty() {
            return Err(Error::InsufficientData("no labeled segments to train on".into()));
        }
        if let Some(s) = segments.iter().find(|s| !model.trained[s.state]) {
            return Err(Error::InvalidInput(format!(
                "segment labeled with untrained state {}",
                s.state + 1
            )));
        }
        Ok(Self {
            template: model.clone(),
            layout: ParamLayout::new(model, sharing, freeze_noise),
            segments,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn initial_point(&self) -> Vec<f64> {
        self.layout.pack(&self.template)
    }

    pub fn model_at(&self, x: &[f64]) -> Result<SwitchingGPModel> {
        self.layout.unpack(&self.template, x)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.evaluate_inner(x, false).map(|(v, _)| v)
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.evaluate_inner(x, true)
    }

    fn evaluate_inner(&self, x: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { params: x.to_vec() });
        }
        let model = self.model_at(x)?;
        let layout = &self.layout;

        let mut keys: Vec<(usize, usize)> = self.segments.iter().map(|s| (s.state, s.residual.nrows())).collect();
        keys.sort_unstable();
        keys.dedup();
        let temporal: HashMap<(usize, usize), TemporalEigen> = keys
            .par_iter()
            .map(|&(j, n)| ((j, n), TemporalEigen::new(&model.emissions[j].temporal, n, with_grad)))
            .collect();
        let task: Vec<TaskEigen> = layout
            .task_reps
            .iter()
            .map(|&j| TaskEigen::new(&model.emissions[j].task, &model.noise))
            .collect();

        let results: Vec<Result<(f64, Option<SegmentGradient>)>> = self
            .segments
            .par_iter()
            .map(|s| {
                let te = &temporal[&(s.state, s.residual.nrows())];
                let kg = layout.task_group[s.state].expect("trained state has a task group");
                kronecker_segment(te, &task[kg], &model.noise, &s.residual, s.state, with_grad)
            })
            .collect();

        let p = layout.num_features;
        let mut value = 0.0;
        let mut d_var = vec![0.0; layout.temporal_reps.len()];
        let mut d_ell = vec![0.0; layout.temporal_reps.len()];
        let mut g_task = vec![DMatrix::<f64>::zeros(p, p); layout.task_reps.len()];
        let mut d_noise = DVector::<f64>::zeros(p);
        for (s, r) in self.segments.iter().zip(results) {
            let (nll, grad) = r?;
            value += nll;
            if let Some(g) = grad {
                let tg = layout.temporal_group[s.state].expect("trained state has a temporal group");
                let kg = layout.task_group[s.state].expect("trained state has a task group");
                d_var[tg] += g.d_log_variance;
                d_ell[tg] += g.d_log_lengthscale;
                g_task[kg] += g.g_task;
                d_noise += g.d_noise;
            }
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { params: x.to_vec() });
        }
        if !with_grad {
            return Ok((value, Vec::new()));
        }

        let mut grad = vec![0.0; layout.len];
        for g in 0..layout.temporal_reps.len() {
            if let Some(i) = layout.variance_idx[g] {
                grad[i] = d_var[g];
            }
            grad[layout.lengthscale_idx[g]] = d_ell[g];
        }
        for (g, &j) in layout.task_reps.iter().enumerate() {
            let l = model.emissions[j].task.cholesky();
            let d_l = 2.0 * &g_task[g] * l;
            let mut i = layout.task_idx[g];
            for r in 0..p {
                for c in 0..=r {
                    grad[i] = if r == c { d_l[(r, c)] * l[(r, c)] } else { d_l[(r, c)] };
                    i += 1;
                }
            }
        }
        if let Some(i0) = layout.noise_idx {
            for (q, d) in model.noise.variances().iter().enumerate() {
                grad[i0 + q] = d_noise[q] * d;
            }
        }
        Ok((value, grad))
    }
}
