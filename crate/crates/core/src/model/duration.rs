//! Gamma sojourn-time distributions, their closed-form maximum-likelihood fit, and the
//! discretization onto the unit time grid used by the filter.

use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};

/// Gamma duration with shape `k` and scale `β` (time steps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaDuration {
    shape: f64,
    scale: f64,
}

impl GammaDuration {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Gamma duration needs finite shape > 0 and scale > 0, got ({shape}, {scale})"
            )));
        }
        Ok(Self { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            gamma_lr(self.shape, x / self.scale)
        }
    }

    fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            1.0
        } else {
            gamma_ur(self.shape, x / self.scale)
        }
    }

    /// Mass of the unit bin `(d-1, d]`, computed from whichever tail is more accurate.
    pub fn bin_mass(&self, d: usize) -> f64 {
        let (lo, hi) = ((d as f64) - 1.0, d as f64);
        if self.cdf(hi) < 0.5 {
            (self.cdf(hi) - self.cdf(lo)).max(0.0)
        } else {
            (self.sf(lo) - self.sf(hi)).max(0.0)
        }
    }

    /// Smallest `x` with `cdf(x) >= p`, by bisection.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0 - 1e-15);
        let mut hi = self.mean().max(1.0);
        while self.cdf(hi) < p {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Per-step masses on `1..=cap`, truncated at `cap` and renormalized.
    pub fn discretize(&self, cap: usize) -> Result<DiscreteDuration> {
        if cap == 0 {
            return Err(Error::InvalidInput("duration cap must be >= 1".into()));
        }
        let mut mass: Vec<f64> = (1..=cap).map(|d| self.bin_mass(d)).collect();
        let total: f64 = mass.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "Gamma(shape={}, scale={}) has no mass on 1..={cap}",
                self.shape, self.scale
            )));
        }
        for m in mass.iter_mut() {
            *m /= total;
        }
        Ok(DiscreteDuration::from_masses(mass))
    }
}

/// Duration distribution on `1..=cap` in log space, with survival `P(s >= d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDuration {
    log_mass: Vec<f64>,
    log_survival: Vec<f64>,
}

impl DiscreteDuration {
    /// `masses[d-1] = P(s = d)`; assumed normalized.
    pub fn from_masses(masses: Vec<f64>) -> Self {
        let cap = masses.len();
        let mut survival = vec![0.0; cap];
        let mut acc = 0.0;
        for d in (0..cap).rev() {
            acc += masses[d];
            survival[d] = acc;
        }
        Self {
            log_mass: masses.iter().map(|m| m.ln()).collect(),
            log_survival: survival.iter().map(|s| s.ln()).collect(),
        }
    }

    pub fn cap(&self) -> usize {
        self.log_mass.len()
    }

    /// `log P(s = d)`, `-inf` outside `1..=cap`.
    pub fn log_mass(&self, d: usize) -> f64 {
        if d == 0 || d > self.cap() {
            f64::NEG_INFINITY
        } else {
            self.log_mass[d - 1]
        }
    }

    /// `log P(s >= d)`; 0 for `d <= 1`, `-inf` beyond the cap.
    pub fn log_survival(&self, d: usize) -> f64 {
        if d <= 1 {
            0.0
        } else if d > self.cap() {
            f64::NEG_INFINITY
        } else {
            self.log_survival[d - 1]
        }
    }
}

/// Closed-form approximate Gamma MLE from positive duration samples.
///
/// Uses `v = ln(mean(s)) - mean(ln s)`, `k = (3 - v + sqrt((v - 3)² + 24 v)) / (12 v)` and
/// `β = mean(s) / k`.
pub fn fit_duration_gamma(durations: &[f64]) -> Result<GammaDuration> {
    if durations.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "Gamma fit needs at least 2 durations, got {}",
            durations.len()
        )));
    }
    if let Some(bad) = durations.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
        return Err(Error::InvalidInput(format!("durations must be > 0, got {bad}")));
    }
    let n = durations.len() as f64;
    let mean = durations.iter().sum::<f64>() / n;
    let mean_log = durations.iter().map(|d| d.ln()).sum::<f64>() / n;
    let v = mean.ln() - mean_log;
    if v <= 1e-12 {
        return Err(Error::DegenerateDuration);
    }
    let shape = (3.0 - v + ((v - 3.0).powi(2) + 24.0 * v).sqrt()) / (12.0 * v);
    GammaDuration::new(shape, mean / shape)
}
