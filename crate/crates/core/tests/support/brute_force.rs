//! Exhaustive enumeration of segmentations for tiny switching models.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Gamma};

use switchgp_core::filter::Filter;
use switchgp_core::gp_predict::segment_emission_loglik;
use switchgp_core::kernels::{MaternKernel, NoiseModel, Smoothness, TaskCovariance};
use switchgp_core::model::{GammaDuration, StateEmission, SwitchingGPModel, TransitionMatrix};

pub fn random_model(rng: &mut ChaCha8Rng, a: usize, p: usize, cap: usize) -> SwitchingGPModel {
    let mut probs = DMatrix::from_fn(a, a, |i, j| if i == j { 0.0 } else { rng.random_range(0.05..1.0) });
    for i in 0..a {
        let s: f64 = probs.row(i).iter().sum();
        if s > 0.0 {
            for j in 0..a {
                probs[(i, j)] /= s;
            }
        }
    }
    let smooth = [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves];
    let emissions = (0..a)
        .map(|_| StateEmission {
            mean: DVector::from_fn(p, |_, _| rng.random_range(-1.5..1.5)),
            temporal: MaternKernel::new(
                rng.random_range(0.3..2.0),
                rng.random_range(0.5..4.0),
                smooth[rng.random_range(0..3)],
            )
            .unwrap(),
            task: TaskCovariance::new(DMatrix::from_fn(p, p, |r, c| {
                if r == c {
                    rng.random_range(0.5..1.2)
                } else if r > c {
                    rng.random_range(-0.6..0.6)
                } else {
                    0.0
                }
            }))
            .unwrap(),
        })
        .collect();
    let mut m = SwitchingGPModel::new(
        (0..a)
            .map(|_| GammaDuration::new(rng.random_range(0.5..4.0), rng.random_range(0.3..2.0)).unwrap())
            .collect(),
        TransitionMatrix::new(probs).unwrap(),
        emissions,
        NoiseModel::new((0..p).map(|_| rng.random_range(0.05..0.6)).collect()).unwrap(),
        cap,
    )
    .unwrap();
    let w: Vec<f64> = (0..a).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    m.initial = w.iter().map(|v| v / s).collect();
    m
}

/// Truncated, renormalized unit-bin masses from an independent Gamma CDF.
pub fn masses(g: &GammaDuration, cap: usize) -> Vec<f64> {
    let dist = Gamma::new(g.shape(), 1.0 / g.scale()).unwrap();
    let raw: Vec<f64> = (1..=cap)
        .map(|d| dist.cdf(d as f64) - dist.cdf(d as f64 - 1.0))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|m| m / total).collect()
}

pub struct Oracle<'a> {
    pub model: &'a SwitchingGPModel,
    pub rows: &'a DMatrix<f64>,
    pub mask: &'a DMatrix<bool>,
    pub g: Vec<Vec<f64>>,
}

impl Oracle<'_> {
    fn emission(&self, j: usize, start: usize, len: usize) -> f64 {
        let w = self.rows.rows(start, len).into_owned();
        let m = self.mask.rows(start, len).into_owned();
        segment_emission_loglik(&self.model.emissions[j], &self.model.noise, &w, &m)
            .unwrap()
            .exp()
    }

    fn survival(&self, j: usize, d: usize) -> f64 {
        self.g[j][d - 1..].iter().sum()
    }

    /// Joint probability of `y_1..y_t` with each state occupying step `t`, summed over every
    /// segmentation whose final segment is still in progress.
    pub fn joint(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.model.num_states()];
        self.recurse(0, t, None, 1.0, &mut out);
        out
    }

    fn recurse(&self, start: usize, t: usize, prev: Option<usize>, acc: f64, out: &mut [f64]) {
        let a = self.model.num_states();
        let cap = self.model.duration_cap;
        for j in 0..a {
            let enter = match prev {
                None => self.model.initial[j],
                Some(_) if a == 1 => 1.0,
                Some(i) if i == j => continue,
                Some(i) => self.model.transitions.prob(i, j),
            };
            if enter == 0.0 {
                continue;
            }
            for d in 1..=cap.min(t - start) {
                let b = self.emission(j, start, d);
                if start + d == t {
                    out[j] += acc * enter * self.survival(j, d) * b;
                } else {
                    self.recurse(start + d, t, Some(j), acc * enter * self.g[j][d - 1] * b, out);
                }
            }
        }
    }
}

/// Runs the filter on a random tiny instance and returns the largest deviation from the
/// enumeration oracle in the state posterior and in the log evidence (relative).
pub fn check_instance(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = rng.random_range(1..=3);
    let p = rng.random_range(1..=2);
    let cap = rng.random_range(1..=3);
    let t_len = rng.random_range(1..=5);
    let model = random_model(&mut rng, a, p, cap);
    let rows = DMatrix::from_fn(t_len, p, |_, _| rng.random_range(-2.0..2.0));
    let mask = DMatrix::from_fn(t_len, p, |_, _| rng.random_bool(0.8));
    let oracle = Oracle {
        model: &model,
        rows: &rows,
        mask: &mask,
        g: model.durations.iter().map(|g| masses(g, cap)).collect(),
    };
    let filter = Filter::new(&model).unwrap().with_pruning(None);
    let row = |t: usize| -> (Vec<f64>, Vec<bool>) {
        (
            rows.row(t).iter().copied().collect(),
            mask.row(t).iter().copied().collect(),
        )
    };
    let (r0, m0) = row(0);
    let mut state = filter.init(&r0, &m0).unwrap();
    let (mut post_err, mut evidence_err) = (0.0f64, 0.0f64);
    for t in 1..=t_len {
        let joint = oracle.joint(t);
        let evidence: f64 = joint.iter().sum();
        if t > 1 {
            let (r, m) = row(t - 1);
            state = filter.step(&state, &r, &m).unwrap();
        }
        let post = state.state_posterior();
        for j in 0..a {
            post_err = post_err.max((post[j] - joint[j] / evidence).abs());
        }
        evidence_err = evidence_err.max((state.log_evidence() - evidence.ln()).abs() / evidence.ln().abs().max(1.0));
    }
    (post_err, evidence_err)
}
