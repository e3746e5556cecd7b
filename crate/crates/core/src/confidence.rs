//! Confidence radii for the least-squares ellipsoids and the safe-set margin.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RlsState;

/// Concentration constants valid for a coordinate-wise union bound on a
/// standard normal vector: `P(‖z‖₂ > √(2d·log(2d/δ))) ≤ δ`.
pub const DEFAULT_CONC_C: f64 = 2.0;
pub const DEFAULT_CONC_C_PRIME: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    /// Sub-Gaussian scale `R` of both noise channels.
    pub noise: f64,
    /// Bound `S` on `‖θ★‖₂` and `‖μ★‖₂`.
    pub norm_bound: f64,
    /// Bound `L` on `‖x‖₂` over the action set.
    pub action_bound: f64,
    pub dim: usize,
    pub lambda: f64,
    /// Global failure probability δ.
    pub delta: f64,
    /// Per-round level δ′ used inside the radii.
    pub delta_prime: f64,
    pub horizon: usize,
    pub conc_c: f64,
    pub conc_c_prime: f64,
}

impl ConfidenceConfig {
    /// Builds a config with `δ′ = δ / (6T)` and the default concentration constants.
    pub fn new(
        noise: f64,
        norm_bound: f64,
        action_bound: f64,
        dim: usize,
        lambda: f64,
        delta: f64,
        horizon: usize,
    ) -> Result<Self> {
        let cfg = Self {
            noise,
            norm_bound,
            action_bound,
            dim,
            lambda,
            delta,
            delta_prime: delta / (6.0 * horizon.max(1) as f64),
            horizon,
            conc_c: DEFAULT_CONC_C,
            conc_c_prime: DEFAULT_CONC_C_PRIME,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise scale must be nonnegative, got {}", self.noise));
        }
        if !(self.norm_bound > 0.0 && self.action_bound > 0.0) {
            return bad("norm bounds S and L must be positive".into());
        }
        if self.dim == 0 || self.horizon == 0 {
            return bad("dimension and horizon must be positive".into());
        }
        if !(self.lambda >= 1.0) {
            return bad(format!("regularizer must be at least 1, got {}", self.lambda));
        }
        for (name, v) in [("delta", self.delta), ("delta_prime", self.delta_prime)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0,1), got {v}"));
            }
        }
        if !(self.conc_c > 0.0 && self.conc_c_prime > 0.0) {
            return bad("concentration constants must be positive".into());
        }
        Ok(())
    }

    /// `β_t(δ′) = R·√(d·log((1 + (t−1)L²/λ)/δ′)) + √λ·S`.
    pub fn beta(&self, t: usize) -> f64 {
        let t = t.max(1);
        let growth = 1.0 + (t - 1) as f64 * self.action_bound.powi(2) / self.lambda;
        let log_term = (growth / self.delta_prime).ln();
        self.noise * (self.dim as f64 * log_term).sqrt() + self.lambda.sqrt() * self.norm_bound
    }

    /// The safety inflation `1 + (2/C)·L·S`.
    pub fn inflation(&self, level: f64) -> Result<f64> {
        if !(level > 0.0) {
            return Err(Error::InvalidParameter(format!("safety level must be positive, got {level}")));
        }
        Ok(1.0 + 2.0 * self.action_bound * self.norm_bound / level)
    }

    /// `√(c·d·log(c′d/δ′))`.
    pub fn concentration_factor(&self) -> f64 {
        let d = self.dim as f64;
        (self.conc_c * d * (self.conc_c_prime * d / self.delta_prime).ln()).sqrt()
    }

    /// `γ_t(δ′) = β_t(δ′)·(1 + (2/C)LS)·√(c·d·log(c′d/δ′))`.
    pub fn gamma(&self, t: usize, level: f64) -> Result<f64> {
        Ok(self.beta(t) * self.inflation(level)? * self.concentration_factor())
    }
}

/// `C − xᵀμ̂ − β‖x‖_{V⁻¹}`; the action is in the estimated safe set iff this is ≥ 0.
pub fn safe_margin(x: &DVector<f64>, mu_hat: &DVector<f64>, state: &RlsState, beta: f64, level: f64) -> f64 {
    level - x.dot(mu_hat) - beta * state.inv_norm(x)
}
