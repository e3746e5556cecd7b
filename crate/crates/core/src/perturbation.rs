//! The perturbation law used by the Thompson-sampling policies.
//!
//! η_t has IID zero-mean normal coordinates. Its standard deviation equals
//! the safety inflation `1 + (2/C)LS`, so the anti-concentration threshold
//! sits exactly one standard deviation out and the anti-concentration
//! probability is `Φ(−1)` regardless of the instance.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::confidence::{DEFAULT_CONC_C, DEFAULT_CONC_C_PRIME};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{inv_sqrt_factor, RlsState};

/// `Φ(−1)`, the standard normal upper tail at one standard deviation.
pub const ANTI_CONCENTRATION_P: f64 = 0.158_655_253_931_457_05;

pub const DEFAULT_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Static,
    /// Scale `max(floor, inflation·(1 − t/T))`.
    LinearDecay {
        horizon: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub dim: usize,
    pub inflation: f64,
    pub schedule: Schedule,
    pub floor: f64,
    pub conc_c: f64,
    pub conc_c_prime: f64,
}

impl PerturbationSpec {
    pub fn new(dim: usize, inflation: f64) -> Result<Self> {
        let spec = Self {
            dim,
            inflation,
            schedule: Schedule::Static,
            floor: DEFAULT_FLOOR.min(inflation),
            conc_c: DEFAULT_CONC_C,
            conc_c_prime: DEFAULT_CONC_C_PRIME,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The unconstrained linear TS law: unit-variance coordinates.
    pub fn classical(dim: usize) -> Self {
        Self::new(dim, 1.0).expect("unit inflation is valid")
    }

    /// Inflated law for a safety level `C`: scale `1 + (2/C)LS`.
    pub fn for_safety(dim: usize, action_bound: f64, norm_bound: f64, level: f64) -> Result<Self> {
        if !(level > 0.0) {
            return Err(Error::InvalidParameter(format!("safety level must be positive, got {level}")));
        }
        Self::new(dim, 1.0 + 2.0 * action_bound * norm_bound / level)
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Result<Self> {
        self.schedule = schedule;
        self.validate()?;
        Ok(self)
    }

    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        self.floor = floor;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(self.inflation >= 1.0 && self.inflation.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "inflation must be finite and at least 1, got {}",
                self.inflation
            )));
        }
        if !(self.floor > 0.0 && self.floor <= self.inflation) {
            return Err(Error::InvalidParameter(format!("floor must lie in (0, inflation], got {}", self.floor)));
        }
        if let Schedule::LinearDecay { horizon: 0 } = self.schedule {
            return Err(Error::InvalidParameter("decay horizon must be positive".into()));
        }
        Ok(())
    }

    /// Per-coordinate standard deviation at round `t`.
    pub fn scale(&self, t: usize) -> f64 {
        match self.schedule {
            Schedule::Static => self.inflation,
            Schedule::LinearDecay { horizon } => {
                let frac = 1.0 - (t as f64 / horizon as f64).min(1.0);
                (self.inflation * frac).max(self.floor)
            }
        }
    }

    /// Anti-concentration probability at the threshold `inflation`.
    pub fn anti_concentration_p(&self) -> f64 {
        ANTI_CONCENTRATION_P
    }

    /// Radius `inflation·√(c·d·log(c′d/δ))` holding `‖η‖₂` with probability ≥ 1 − δ.
    pub fn concentration_bound(&self, delta: f64) -> f64 {
        let d = self.dim as f64;
        self.inflation * (self.conc_c * d * (self.conc_c_prime * d / delta).ln()).sqrt()
    }

    pub fn sample_eta<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> DVector<f64> {
        let sigma = self.scale(t);
        DVector::from_iterator(self.dim, (0..self.dim).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)))
    }

    /// Monte-Carlo estimate of a tail probability of η at round `t`.
    pub fn tail_probability_estimate<R: Rng + ?Sized>(
        &self,
        mode: &TailMode,
        t: usize,
        n: usize,
        rng: &mut R,
    ) -> Result<TailEstimate> {
        if n < 10_000 {
            return Err(Error::InvalidParameter(format!("tail estimates need at least 10^4 samples, got {n}")));
        }
        if let TailMode::AntiConcentration { direction, .. } = mode {
            ensure_dim(self.dim, direction.len())?;
            if (direction.norm() - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidParameter(format!(
                    "direction must have unit norm, got {}",
                    direction.norm()
                )));
            }
        }
        let mut hits = 0usize;
        for _ in 0..n {
            let eta = self.sample_eta(t, rng);
            let hit = match mode {
                TailMode::AntiConcentration { direction, threshold } => direction.dot(&eta) >= *threshold,
                TailMode::Concentration { bound } => eta.norm() <= *bound,
            };
            hits += hit as usize;
        }
        let p = hits as f64 / n as f64;
        Ok(TailEstimate { estimate: p, std_error: (p * (1.0 - p) / n as f64).sqrt(), samples: n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TailMode {
    /// `P(uᵀη ≥ threshold)` for a unit vector `u`.
    AntiConcentration { direction: DVector<f64>, threshold: f64 },
    /// `P(‖η‖₂ ≤ bound)`.
    Concentration { bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// `θ̃ = θ̂ + β·V^{-1/2}·η` with the symmetric inverse root of the Gram matrix.
pub fn sample_theta_tilde(
    theta_hat: &DVector<f64>,
    beta: f64,
    state: &RlsState,
    eta: &DVector<f64>,
) -> Result<DVector<f64>> {
    ensure_dim(state.dim(), theta_hat.len())?;
    ensure_dim(state.dim(), eta.len())?;
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be nonnegative, got {beta}")));
    }
    let root = inv_sqrt_factor(state.gram())?;
    Ok(theta_hat + beta * (root * eta))
}
