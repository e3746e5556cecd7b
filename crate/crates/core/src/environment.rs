//! Ground-truth environment: instances, noisy observations, safety and regret
//! accounting.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::solver::{linear_max_single_linear_constraint, BoxSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub theta_star: DVector<f64>,
    pub mu_star: DVector<f64>,
    /// Safety level `C > 0`.
    pub level: f64,
    pub bounds: BoxSet,
    /// Noise standard deviation `R` of both channels.
    pub noise: f64,
    /// `S ≥ max(‖θ★‖₂, ‖μ★‖₂)`.
    pub norm_bound: f64,
    /// `L = max_{x∈box} ‖x‖₂`.
    pub action_bound: f64,
    pub x_star: DVector<f64>,
    pub opt_value: f64,
}

impl ProblemInstance {
    /// Builds an instance and caches its optimal safe action. When
    /// `norm_bound` is `None` the tightest valid bound `max(‖θ★‖, ‖μ★‖)` is used.
    pub fn new(
        theta_star: DVector<f64>,
        mu_star: DVector<f64>,
        level: f64,
        bounds: BoxSet,
        noise: f64,
        norm_bound: Option<f64>,
    ) -> Result<Self> {
        ensure_dim(bounds.dim(), theta_star.len())?;
        ensure_dim(bounds.dim(), mu_star.len())?;
        ensure_finite(theta_star.as_slice(), "theta_star")?;
        ensure_finite(mu_star.as_slice(), "mu_star")?;
        if !(level > 0.0 && level.is_finite()) {
            return Err(Error::InvalidParameter(format!("safety level must be positive, got {level}")));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise must be nonnegative, got {noise}")));
        }
        let tight = theta_star.norm().max(mu_star.norm());
        let norm_bound = norm_bound.unwrap_or(tight);
        if !(norm_bound > 0.0) || tight > norm_bound * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "norm bound {norm_bound} does not dominate parameter norms ({tight})"
            )));
        }
        let (x_star, opt_value) = linear_max_single_linear_constraint(&theta_star, &mu_star, level, &bounds)?;
        Ok(Self {
            action_bound: bounds.action_bound(),
            theta_star,
            mu_star,
            level,
            bounds,
            noise,
            norm_bound,
            x_star,
            opt_value,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    /// `C − xᵀμ★`.
    pub fn true_margin(&self, x: &DVector<f64>) -> f64 {
        self.level - x.dot(&self.mu_star)
    }
}

/// The exact optimal safe action `argmax_{x∈box, xᵀμ★≤C} xᵀθ★` and its value.
pub fn optimal_safe_action(inst: &ProblemInstance) -> Result<(DVector<f64>, f64)> {
    linear_max_single_linear_constraint(&inst.theta_star, &inst.mu_star, inst.level, &inst.bounds)
}

/// Settings for randomly drawn instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceGenConfig {
    pub dim: usize,
    pub box_lower: f64,
    pub box_upper: f64,
    pub noise: f64,
    pub level_min: f64,
    pub level_max: f64,
}

impl Default for InstanceGenConfig {
    fn default() -> Self {
        Self { dim: 2, box_lower: -1.0, box_upper: 1.0, noise: 0.1, level_min: 0.05, level_max: 1.0 }
    }
}

/// Draws `θ★, μ★ ~ N(0, I)` rescaled to unit norm (so `S = 1`) and
/// `C ~ U[level_min, level_max]`.
pub fn make_instance<R: Rng + ?Sized>(gen: &InstanceGenConfig, rng: &mut R) -> Result<ProblemInstance> {
    if !(gen.level_min > 0.0 && gen.level_min <= gen.level_max) {
        return Err(Error::InvalidParameter("safety level range must be positive and ordered".into()));
    }
    let bounds = BoxSet::cube(gen.dim, gen.box_lower, gen.box_upper)?;
    let mut unit = || loop {
        let v = DVector::from_iterator(gen.dim, (0..gen.dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    };
    let theta = unit();
    let mu = unit();
    let level =
        if gen.level_min == gen.level_max { gen.level_min } else { rng.random_range(gen.level_min..gen.level_max) };
    ProblemInstance::new(theta, mu, level, bounds, gen.noise, Some(1.0))
}

/// A fixed instance as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub theta_star: Vec<f64>,
    pub mu_star: Vec<f64>,
    #[serde(rename = "C")]
    pub level: f64,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoxSpec>,
    #[serde(default, rename = "R", skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, rename = "S", skip_serializing_if = "Option::is_none")]
    pub norm_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InstanceSpec {
    /// Materializes the instance; a missing box defaults to `[-1,1]^d` and a
    /// missing noise level to `default_noise`.
    pub fn build(&self, default_noise: f64) -> Result<ProblemInstance> {
        let d = self.theta_star.len();
        let bounds = match &self.bounds {
            Some(b) => BoxSet::new(DVector::from_vec(b.lower.clone()), DVector::from_vec(b.upper.clone()))?,
            None => BoxSet::cube(d, -1.0, 1.0)?,
        };
        ProblemInstance::new(
            DVector::from_vec(self.theta_star.clone()),
            DVector::from_vec(self.mu_star.clone()),
            self.level,
            bounds,
            self.noise.unwrap_or(default_noise),
            self.norm_bound,
        )
    }
}

/// Built-in fixed instances: `(name, description, spec)`.
pub fn named_instances() -> Vec<(&'static str, &'static str, InstanceSpec)> {
    let spec = |theta: [f64; 2], mu: [f64; 2], level: f64| InstanceSpec {
        theta_star: theta.to_vec(),
        mu_star: mu.to_vec(),
        level,
        bounds: None,
        noise: None,
        norm_bound: None,
    };
    vec![
        (
            "active_constraint",
            "constraint active at the optimum; Safe-LTS vs Safe-LUCB comparison",
            spec([0.9, 0.23], [0.55, 0.31], 0.11),
        ),
        (
            "active_constraint_mirrored",
            "same reward with the second constraint coordinate negated; safe-set expansion plots",
            spec([0.9, 0.23], [0.55, -0.31], 0.11),
        ),
        (
            "lucb_stall",
            "instance on which naive and inflated safe LUCB stall",
            spec([0.5766, -0.1899], [0.2138, -0.0020], 0.0615),
        ),
    ]
}

pub fn named_instance(name: &str) -> Result<InstanceSpec> {
    named_instances()
        .into_iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, _, s)| s)
        .ok_or_else(|| Error::UnknownInstance(name.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub side_measurement: f64,
    pub violated: bool,
    pub inst_regret: f64,
    pub true_margin: f64,
}

/// Plays `x`: `r = xᵀθ★ + ξ`, `w = xᵀμ★ + ζ` with `ξ, ζ ~ N(0, R²)`.
/// The two noise draws happen in that order every round.
pub fn env_step<R: Rng + ?Sized>(inst: &ProblemInstance, x: &DVector<f64>, rng: &mut R) -> Result<StepOutcome> {
    ensure_dim(inst.dim(), x.len())?;
    if !inst.bounds.contains(x, 1e-12) {
        return Err(Error::OutsideBox { x: x.iter().copied().collect() });
    }
    let xi: f64 = rng.sample(StandardNormal);
    let zeta: f64 = rng.sample(StandardNormal);
    let mean_reward = x.dot(&inst.theta_star);
    let mean_side = x.dot(&inst.mu_star);
    Ok(StepOutcome {
        reward: mean_reward + inst.noise * xi,
        side_measurement: mean_side + inst.noise * zeta,
        violated: mean_side > inst.level,
        inst_regret: inst.opt_value - mean_reward,
        true_margin: inst.level - mean_side,
    })
}

/// One row of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub reward: f64,
    pub side_measurement: f64,
    pub true_margin: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub violated: bool,
    /// The selected pair's optimistic value dominated `x★ᵀθ★`.
    pub optimistic: bool,
    /// θ̂_s stayed in its ellipsoid for all s ≤ t.
    pub e_hat: bool,
    /// μ̂_s stayed in its ellipsoid for all s ≤ t.
    pub z_hat: bool,
    /// Both of the above.
    pub z_event: bool,
    /// θ̃_s stayed within γ_s of θ̂_s for all s ≤ t (Thompson kinds only).
    pub e_tilde: Option<bool>,
    /// Shrink factor `α_t` of the optimal action.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub rounds: usize,
    pub final_regret: f64,
    pub violations: usize,
    pub optimistic_rounds: usize,
    /// Rounds where the instantaneous coverage event held.
    pub z_rounds: usize,
    /// Optimistic rounds among those.
    pub optimistic_given_z: usize,
    pub covered: bool,
    pub e_tilde_held: Option<bool>,
    pub potential: f64,
    pub potential_bound: f64,
    pub min_estimated_margin: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub policy: String,
    pub seed: u64,
    pub instance: ProblemInstance,
    pub rounds: Vec<RoundRecord>,
    pub summary: EpisodeSummary,
}

impl EpisodeLog {
    pub fn run_id(&self) -> String {
        format!("{}-{}", self.policy, self.seed)
    }

    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.cum_regret).collect()
    }
}
