//! Limited-memory BFGS with backtracking line search.

use std::collections::VecDeque;

use log::debug;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Relative objective change treated as stalled.
    pub rel_tolerance: f64,
    /// Consecutive stalled iterations required to declare convergence.
    pub patience: usize,
    pub grad_tolerance: f64,
    pub history: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_tolerance: 1e-6,
            patience: 5,
            grad_tolerance: 1e-8,
            history: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerReport {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns the objective and its gradient.
///
/// Accepted objectives are monotone non-increasing; a violation is reported as an error rather
/// than silently accepted. Evaluation errors during a line search shrink the step; a
/// non-finite objective at the starting point is an error.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, config: &OptimizerConfig) -> Result<(Vec<f64>, OptimizerReport)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    let mut evaluations = 1;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { params: x });
    }
    let initial = fx;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stalled = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        if inf_norm(&g) <= config.grad_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut direction = two_loop(&g, &memory);
        let mut slope = dot(&direction, &g);
        if slope >= 0.0 {
            memory.clear();
            direction = g.iter().map(|v| -v).collect();
            slope = dot(&direction, &g);
        }
        let mut step = if memory.is_empty() {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&direction).map(|(xi, di)| xi + step * di).collect();
            evaluations += 1;
            match f(&trial) {
                Ok((ft, gt)) if ft.is_finite() && gt.iter().all(|v| v.is_finite()) => {
                    if ft <= fx + ARMIJO * step * slope {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                Ok(_)
                | Err(Error::NonPositiveDefinite(_))
                | Err(Error::NonFinite { .. })
                | Err(Error::InvalidInput(_)) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if memory.is_empty() {
                debug!("line search failed along steepest descent; stopping at iteration {iterations}");
                converged = true;
                break;
            }
            memory.clear();
            continue;
        };
        if fnew > fx {
            return Err(Error::OptimizerContract {
                iteration: iterations,
                previous: fx,
                current: fnew,
            });
        }

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == config.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }

        let rel = (fx - fnew).abs() / fnew.abs().max(1.0);
        debug!("iteration {iterations}: objective {fnew:.10e} (rel change {rel:.3e})");
        x = xn;
        fx = fnew;
        g = gn;
        if rel < config.rel_tolerance {
            stalled += 1;
            if stalled >= config.patience {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Ok((
        x,
        OptimizerReport {
            initial_objective: initial,
            final_objective: fx,
            iterations,
            evaluations,
            converged,
        },
    ))
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter().map(|v| -v).collect()
}
