//! Discrete variance-preserving noise schedule with cosine decay.

use thiserror::Error;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_EPS_D: f64 = 0.008;
pub const BETA_FLOOR: f64 = 1e-12;
pub const BETA_CEIL: f64 = 0.999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("eps_d must be positive and finite, got {0}")]
    BadEps(f64),
    #[error("beta[{index}] = {value} outside (0, 1)")]
    BadBeta { index: usize, value: f64 },
    #[error("step {t} outside {lo}..={hi}")]
    OutOfRange { t: usize, lo: usize, hi: usize },
}

/// `f_d(τ) = cos²(π/2 · (τ + ε_d)/(1 + ε_d))`.
pub fn cosine_decay(tau: f64, eps_d: f64) -> f64 {
    let c = (std::f64::consts::FRAC_PI_2 * (tau + eps_d) / (1.0 + eps_d)).cos();
    c * c
}

/// β and ᾱ tables. `beta[t-1]` holds β_t for `t = 1..=T`; `alpha_bar[t]`
/// holds ᾱ_t for `t = 0..=T` with `alpha_bar[0] = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    eps_d: f64,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn cosine(steps: usize, eps_d: f64) -> Result<Self, ScheduleError> {
        if steps < 2 {
            return Err(ScheduleError::TooFewSteps(steps));
        }
        if !(eps_d > 0.0 && eps_d.is_finite()) {
            return Err(ScheduleError::BadEps(eps_d));
        }
        let tau = |t: usize| t as f64 / steps as f64;
        let beta = (1..=steps)
            .map(|t| {
                let ratio = cosine_decay(tau(t + 1), eps_d) / cosine_decay(tau(t), eps_d);
                let b = 1.0 - ratio;
                // NaN (0/0) cannot occur for eps_d > 0, but clamp it to the floor if it did.
                if b.is_nan() {
                    BETA_FLOOR
                } else {
                    b.clamp(BETA_FLOOR, BETA_CEIL)
                }
            })
            .collect();
        Self::from_betas(beta, eps_d)
    }

    /// Rebuilds ᾱ from a stored β table (checkpoint loading).
    pub fn from_betas(beta: Vec<f64>, eps_d: f64) -> Result<Self, ScheduleError> {
        if beta.len() < 2 {
            return Err(ScheduleError::TooFewSteps(beta.len()));
        }
        if !(eps_d > 0.0 && eps_d.is_finite()) {
            return Err(ScheduleError::BadEps(eps_d));
        }
        if let Some((i, &b)) = beta
            .iter()
            .enumerate()
            .find(|(_, &b)| !(b > 0.0 && b < 1.0))
        {
            return Err(ScheduleError::BadBeta {
                index: i + 1,
                value: b,
            });
        }
        let mut alpha_bar = Vec::with_capacity(beta.len() + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self {
            steps: beta.len(),
            eps_d,
            beta,
            alpha_bar,
        })
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn eps_d(&self) -> f64 {
        self.eps_d
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// ᾱ_t for `0 <= t <= T`.
    pub fn alpha_bar_at(&self, t: usize) -> Result<f64, ScheduleError> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or(ScheduleError::OutOfRange {
                t,
                lo: 0,
                hi: self.steps,
            })
    }

    /// β_t for `1 <= t <= T`.
    pub fn beta_at(&self, t: usize) -> Result<f64, ScheduleError> {
        if t == 0 || t > self.steps {
            return Err(ScheduleError::OutOfRange {
                t,
                lo: 1,
                hi: self.steps,
            });
        }
        Ok(self.beta[t - 1])
    }

    // Unchecked accessors for hot loops; callers validate `t` once.
    pub(crate) fn ab(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub(crate) fn b(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }
}
