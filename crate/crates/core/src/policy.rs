//! Decision policies behind one interface, plus the optimism diagnostics.
//!
//! Every policy picks its action from the estimated safe set
//! `D_t = {x ∈ box : xᵀμ̂_t + β_t‖x‖_{V_t⁻¹} ≤ C}` except oracle LTS, which
//! sees the true constraint `xᵀμ★ ≤ C`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceConfig;
use crate::environment::ProblemInstance;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{Channel, RlsState};
use crate::perturbation::{sample_theta_tilde, PerturbationSpec, Schedule, DEFAULT_FLOOR};
use crate::solver::{lucb_vertex_argmax, safe_linear_max, BoxSet, SocConstraint, DEFAULT_TOL};

pub const DEFAULT_EXPLORE_HORIZON: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    SafeLts,
    OracleLts,
    DynamicSafeLts,
    NaiveSafeLucb,
    InflatedSafeLucb,
    SafeLucb,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::SafeLts,
        PolicyKind::OracleLts,
        PolicyKind::DynamicSafeLts,
        PolicyKind::NaiveSafeLucb,
        PolicyKind::InflatedSafeLucb,
        PolicyKind::SafeLucb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::SafeLts => "safe_lts",
            PolicyKind::OracleLts => "oracle_lts",
            PolicyKind::DynamicSafeLts => "dynamic_safe_lts",
            PolicyKind::NaiveSafeLucb => "naive_safe_lucb",
            PolicyKind::InflatedSafeLucb => "inflated_safe_lucb",
            PolicyKind::SafeLucb => "safe_lucb",
        }
    }

    /// Thompson-sampling kinds draw a perturbed parameter every round.
    pub fn is_thompson(self) -> bool {
        matches!(self, PolicyKind::SafeLts | PolicyKind::OracleLts | PolicyKind::DynamicSafeLts)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

/// Tuning shared by all policies of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySettings {
    pub lambda: f64,
    pub delta: f64,
    pub horizon: usize,
    pub tol: f64,
    /// Pure-exploration rounds of Safe-LUCB.
    pub explore_horizon: usize,
    /// Lower limit of the decaying perturbation scale.
    pub schedule_floor: f64,
}

impl PolicySettings {
    /// Defaults for a horizon `T`: `λ = 1`, `δ = 1/(4T)`.
    pub fn for_horizon(horizon: usize) -> Self {
        Self {
            lambda: 1.0,
            delta: 1.0 / (4.0 * horizon.max(1) as f64),
            horizon,
            tol: DEFAULT_TOL,
            explore_horizon: DEFAULT_EXPLORE_HORIZON,
            schedule_floor: DEFAULT_FLOOR,
        }
    }
}

/// What a policy chose at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub x: DVector<f64>,
    /// `max_{x∈D_t} xᵀθ`, with θ the parameter the policy optimized against
    /// (θ̃_t, or the optimistic vertex for LUCB). `None` during pure exploration.
    pub value: Option<f64>,
    pub theta_tilde: Option<DVector<f64>>,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimismRecord {
    pub t: usize,
    pub alpha_t: f64,
    /// `max_{x∈D_t} xᵀθ̃_t ≥ x★ᵀθ★`.
    pub sampled_optimistic: bool,
    /// Both RLS estimates lie within `β_t` of the truth in `V_t`-norm.
    pub z_event: bool,
}

#[derive(Debug, Clone)]
pub struct PolicyState {
    kind: PolicyKind,
    rls: RlsState,
    cfg: ConfidenceConfig,
    pert: Option<PerturbationSpec>,
    inflation_reward: f64,
    explore_horizon: usize,
    last_theta_tilde: Option<DVector<f64>>,
    level: f64,
    bounds: BoxSet,
    tol: f64,
    /// True constraint vector, held by the oracle only.
    oracle_mu: Option<DVector<f64>>,
}

impl PolicyState {
    /// A fresh policy for `inst`. Policies know `R`, `S`, `L`, `C` and the
    /// box; only the oracle also sees `μ★`.
    pub fn new(kind: PolicyKind, inst: &ProblemInstance, settings: &PolicySettings) -> Result<Self> {
        let d = inst.dim();
        let cfg = ConfidenceConfig::new(
            inst.noise,
            inst.norm_bound,
            inst.action_bound,
            d,
            settings.lambda,
            settings.delta,
            settings.horizon,
        )?;
        if !(settings.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("solver tolerance must be positive, got {}", settings.tol)));
        }
        let inflation = cfg.inflation(inst.level)?;
        let pert = match kind {
            PolicyKind::SafeLts => Some(PerturbationSpec::new(d, inflation)?),
            PolicyKind::OracleLts => Some(PerturbationSpec::classical(d)),
            PolicyKind::DynamicSafeLts => Some(
                PerturbationSpec::new(d, inflation)?
                    .with_schedule(Schedule::LinearDecay { horizon: settings.horizon })?
                    .with_floor(settings.schedule_floor)?,
            ),
            _ => None,
        };
        Ok(Self {
            kind,
            rls: RlsState::new(d, settings.lambda)?,
            cfg,
            pert,
            inflation_reward: if kind == PolicyKind::InflatedSafeLucb { inflation } else { 1.0 },
            explore_horizon: if kind == PolicyKind::SafeLucb { settings.explore_horizon } else { 0 },
            last_theta_tilde: None,
            level: inst.level,
            bounds: inst.bounds.clone(),
            tol: settings.tol,
            oracle_mu: (kind == PolicyKind::OracleLts).then(|| inst.mu_star.clone()),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn rls(&self) -> &RlsState {
        &self.rls
    }

    pub fn confidence(&self) -> &ConfidenceConfig {
        &self.cfg
    }

    pub fn perturbation(&self) -> Option<&PerturbationSpec> {
        self.pert.as_ref()
    }

    pub fn inflation_reward(&self) -> f64 {
        self.inflation_reward
    }

    pub fn explore_horizon(&self) -> usize {
        self.explore_horizon
    }

    pub fn last_theta_tilde(&self) -> Option<&DVector<f64>> {
        self.last_theta_tilde.as_ref()
    }

    /// `γ_t` for the perturbation actually used by this policy.
    pub fn sample_radius(&self, t: usize) -> Option<f64> {
        self.pert.as_ref().map(|p| self.cfg.beta(t) * p.inflation * self.cfg.concentration_factor())
    }

    /// The constraint defining this round's action set.
    pub fn action_constraint(&self, t: usize) -> Result<SocConstraint<'_>> {
        match &self.oracle_mu {
            Some(mu) => SocConstraint::new(mu.clone(), 0.0, self.rls.gram_inv(), self.level),
            None => SocConstraint::from_state(
                self.rls.rls_estimate(Channel::Safety),
                self.cfg.beta(t),
                &self.rls,
                self.level,
            ),
        }
    }

    /// Dispatches to the step function of this policy's kind.
    pub fn select<R: Rng + ?Sized>(&mut self, t: usize, rng: &mut R) -> Result<Decision> {
        if t != self.rls.round() {
            return Err(Error::InvalidParameter(format!(
                "round {t} requested but the state is at round {}",
                self.rls.round()
            )));
        }
        match self.kind {
            PolicyKind::SafeLts | PolicyKind::OracleLts | PolicyKind::DynamicSafeLts => safe_lts_step(self, t, rng),
            PolicyKind::NaiveSafeLucb | PolicyKind::InflatedSafeLucb => lucb_step(self, t),
            PolicyKind::SafeLucb => safe_lucb_step(self, t, rng),
        }
    }
}

/// Thompson step: sample θ̃_t, then maximize it over the action set.
pub fn safe_lts_step<R: Rng + ?Sized>(state: &mut PolicyState, t: usize, rng: &mut R) -> Result<Decision> {
    let pert = state
        .pert
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter(format!("{} is not a Thompson-sampling policy", state.kind)))?;
    let beta = state.cfg.beta(t);
    let theta_hat = state.rls.rls_estimate(Channel::Reward);
    let eta = pert.sample_eta(t, rng);
    let theta_tilde = sample_theta_tilde(&theta_hat, beta, &state.rls, &eta)?;
    let con = state.action_constraint(t)?;
    let sol = safe_linear_max(&theta_tilde, &con, &state.bounds, state.tol)?;
    state.last_theta_tilde = Some(theta_tilde.clone());
    Ok(Decision { x: sol.x, value: Some(sol.value), theta_tilde: Some(theta_tilde), beta })
}

/// Optimistic step over the ℓ1 reward set of radius `inflation_reward·β_t·√d`.
pub fn lucb_step(state: &mut PolicyState, t: usize) -> Result<Decision> {
    let beta = state.cfg.beta(t);
    let theta_hat = state.rls.rls_estimate(Channel::Reward);
    let con = state.action_constraint(t)?;
    let choice =
        lucb_vertex_argmax(&theta_hat, state.inflation_reward * beta, &state.rls, &con, &state.bounds, state.tol)?;
    Ok(Decision { x: choice.x, value: Some(choice.value), theta_tilde: None, beta })
}

/// Uniform exploration over `{‖x‖₂ ≤ C/S} ∩ box` for `t ≤ T₀`, then naive LUCB.
pub fn safe_lucb_step<R: Rng + ?Sized>(state: &mut PolicyState, t: usize, rng: &mut R) -> Result<Decision> {
    if t > state.explore_horizon {
        return lucb_step(state, t);
    }
    let radius = state.level / state.cfg.norm_bound;
    let d = state.rls.dim();
    let lo: Vec<f64> = state.bounds.lower.iter().map(|l| l.max(-radius)).collect();
    let hi: Vec<f64> = state.bounds.upper.iter().map(|u| u.min(radius)).collect();
    // uniform on the clipped cube, accepted inside the ball
    let x = loop {
        let x = DVector::from_fn(d, |i, _| if lo[i] < hi[i] { rng.random_range(lo[i]..hi[i]) } else { lo[i] });
        if x.norm() <= radius {
            break x;
        }
    };
    Ok(Decision { x, value: None, theta_tilde: None, beta: state.cfg.beta(t) })
}

/// Feeds back the observation for the action just played.
pub fn policy_update(state: &mut PolicyState, x: &DVector<f64>, r: f64, w: f64) -> Result<()> {
    ensure_dim(state.rls.dim(), x.len())?;
    state.rls.gram_update(x, r, w)
}

/// `α_t = (1 + (2/C)·β·‖x★‖_{V⁻¹})⁻¹`.
pub fn alpha_shrink(x_star: &DVector<f64>, state: &RlsState, beta: f64, level: f64) -> f64 {
    1.0 / (1.0 + 2.0 / level * beta * state.inv_norm(x_star))
}

/// Whether `‖θ̂_t − θ★‖_V ≤ β_t` and `‖μ̂_t − μ★‖_V ≤ β_t`.
pub fn estimates_covered(state: &RlsState, inst: &ProblemInstance, beta: f64) -> (bool, bool) {
    let theta_err = state.rls_estimate(Channel::Reward) - &inst.theta_star;
    let mu_err = state.rls_estimate(Channel::Safety) - &inst.mu_star;
    (state.gram_norm(&theta_err) <= beta, state.gram_norm(&mu_err) <= beta)
}

/// Optimism diagnostics for a sampled parameter at the state's current round.
pub fn optimism_probe(
    state: &PolicyState,
    inst: &ProblemInstance,
    theta_tilde: &DVector<f64>,
) -> Result<OptimismRecord> {
    if !state.kind.is_thompson() {
        return Err(Error::InvalidParameter(format!("{} does not sample parameters", state.kind)));
    }
    let t = state.rls.round();
    let beta = state.cfg.beta(t);
    let con = state.action_constraint(t)?;
    let sol = safe_linear_max(theta_tilde, &con, &state.bounds, state.tol)?;
    let (e_hat, z_hat) = estimates_covered(&state.rls, inst, beta);
    Ok(OptimismRecord {
        t,
        alpha_t: alpha_shrink(&inst.x_star, &state.rls, beta, inst.level),
        sampled_optimistic: sol.value >= inst.opt_value,
        z_event: e_hat && z_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{env_step, make_instance, named_instance, InstanceGenConfig};
    use crate::solver::linear_max_single_linear_constraint;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn active() -> ProblemInstance {
        named_instance("active_constraint").unwrap().build(0.1).unwrap()
    }

    fn play(state: &mut PolicyState, inst: &ProblemInstance, rounds: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut prng = ChaCha8Rng::seed_from_u64(seed);
        let mut erng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
        let mut xs = Vec::new();
        for t in 1..=rounds {
            let dec = state.select(t, &mut prng).unwrap();
            let out = env_step(inst, &dec.x, &mut erng).unwrap();
            policy_update(state, &dec.x, out.reward, out.side_measurement).unwrap();
            xs.push(dec.x);
        }
        xs
    }

    #[test]
    fn kind_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
        assert!(matches!("ucb".parse::<PolicyKind>(), Err(Error::UnknownPolicy(_))));
    }

    #[test]
    fn first_action_is_safe() {
        let gen = InstanceGenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let inst = make_instance(&gen, &mut rng).unwrap();
            let settings = PolicySettings::for_horizon(1000);
            for kind in [
                PolicyKind::SafeLts,
                PolicyKind::DynamicSafeLts,
                PolicyKind::NaiveSafeLucb,
                PolicyKind::InflatedSafeLucb,
            ] {
                let mut state = PolicyState::new(kind, &inst, &settings).unwrap();
                let beta = state.confidence().beta(1);
                let x = state.select(1, &mut rng).unwrap().x;
                assert!(beta * x.norm() / settings.lambda.sqrt() <= inst.level * (1.0 + 1e-12));
                assert!(x.dot(&inst.mu_star) <= inst.level);
            }
        }
    }

    #[test]
    fn huge_level_gives_sign_matched_corner() {
        let mut inst = active();
        inst.level = 1e9;
        let mut state = PolicyState::new(PolicyKind::SafeLts, &inst, &PolicySettings::for_horizon(100)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = state.select(1, &mut rng).unwrap();
        assert_eq!(dec.x, inst.bounds.corner_for(dec.theta_tilde.as_ref().unwrap()));
    }

    #[test]
    fn action_sequence_is_deterministic() {
        let inst = active();
        let settings = PolicySettings::for_horizon(200);
        for kind in PolicyKind::ALL {
            let mut a = PolicyState::new(kind, &inst, &settings).unwrap();
            let mut b = PolicyState::new(kind, &inst, &settings).unwrap();
            let xa = play(&mut a, &inst, 60, 11);
            let xb = play(&mut b, &inst, 60, 11);
            assert_eq!(xa, xb, "{kind}");
        }
    }

    #[test]
    fn round_mismatch_is_rejected() {
        let inst = active();
        let mut state = PolicyState::new(PolicyKind::SafeLts, &inst, &PolicySettings::for_horizon(10)).unwrap();
        assert!(state.select(2, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn actions_stay_in_estimated_safe_set() {
        let inst = active();
        let settings = PolicySettings::for_horizon(300);
        for kind in
            [PolicyKind::SafeLts, PolicyKind::DynamicSafeLts, PolicyKind::NaiveSafeLucb, PolicyKind::InflatedSafeLucb]
        {
            let mut state = PolicyState::new(kind, &inst, &settings).unwrap();
            let mut prng = ChaCha8Rng::seed_from_u64(4);
            let mut erng = ChaCha8Rng::seed_from_u64(5);
            for t in 1..=300 {
                let con = state.action_constraint(t).unwrap();
                assert_eq!(con.margin(&DVector::zeros(2)), inst.level);
                let dec = state.select(t, &mut prng).unwrap();
                let con = state.action_constraint(t).unwrap();
                assert!(con.margin(&dec.x) >= -settings.tol, "{kind} round {t}");
                assert!(inst.bounds.contains(&dec.x, 0.0));
                let out = env_step(&inst, &dec.x, &mut erng).unwrap();
                policy_update(&mut state, &dec.x, out.reward, out.side_measurement).unwrap();
            }
        }
    }

    #[test]
    fn lucb_zero_radius_is_greedy() {
        let inst = active();
        let mut settings = PolicySettings::for_horizon(50);
        settings.tol = 1e-9;
        let mut state = PolicyState::new(PolicyKind::NaiveSafeLucb, &inst, &settings).unwrap();
        play(&mut state, &inst, 20, 1);
        let t = state.rls().round();
        let con = state.action_constraint(t).unwrap();
        let greedy = safe_linear_max(&state.rls().rls_estimate(Channel::Reward), &con, &inst.bounds, 1e-9).unwrap();
        let choice =
            lucb_vertex_argmax(&state.rls().rls_estimate(Channel::Reward), 0.0, state.rls(), &con, &inst.bounds, 1e-9)
                .unwrap();
        assert_eq!(choice.x, greedy.x);
    }

    #[test]
    fn inflated_lucb_is_at_least_as_optimistic() {
        let inst = active();
        let settings = PolicySettings::for_horizon(100);
        let mut naive = PolicyState::new(PolicyKind::NaiveSafeLucb, &inst, &settings).unwrap();
        play(&mut naive, &inst, 40, 3);
        let mut inflated = naive.clone();
        inflated.inflation_reward = inflated.confidence().inflation(inst.level).unwrap();
        let t = naive.rls().round();
        let a = lucb_step(&mut naive, t).unwrap().value.unwrap();
        let b = lucb_step(&mut inflated, t).unwrap().value.unwrap();
        assert!(b >= a - 1e-6);
    }

    #[test]
    fn exploration_stays_in_seed_ball() {
        let inst = active();
        let mut settings = PolicySettings::for_horizon(100_000);
        settings.explore_horizon = 100_000;
        let mut state = PolicyState::new(PolicyKind::SafeLucb, &inst, &settings).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let radius = inst.level / inst.norm_bound;
        let mut sum = DVector::zeros(2);
        let mut sq = DVector::zeros(2);
        for _ in 0..n {
            let x = safe_lucb_step(&mut state, 1, &mut rng).unwrap().x;
            assert!(x.norm() <= radius);
            assert!(x.dot(&inst.mu_star) <= inst.level);
            sum += &x;
            sq += x.component_mul(&x);
        }
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let sd = (sq[i] / n as f64 - mean * mean).sqrt();
            assert!(mean.abs() <= 3.0 * sd / (n as f64).sqrt());
        }
    }

    #[test]
    fn zero_exploration_matches_naive_trace() {
        let inst = active();
        let mut settings = PolicySettings::for_horizon(100);
        settings.explore_horizon = 0;
        let mut a = PolicyState::new(PolicyKind::SafeLucb, &inst, &settings).unwrap();
        let mut b = PolicyState::new(PolicyKind::NaiveSafeLucb, &inst, &settings).unwrap();
        assert_eq!(play(&mut a, &inst, 50, 7), play(&mut b, &inst, 50, 7));
    }

    #[test]
    fn update_advances_round_and_matches_batch_gram() {
        let inst = active();
        let mut state = PolicyState::new(PolicyKind::SafeLts, &inst, &PolicySettings::for_horizon(10)).unwrap();
        let x1 = DVector::from_vec(vec![0.3, -0.2]);
        let x2 = DVector::from_vec(vec![-0.1, 0.5]);
        policy_update(&mut state, &x1, 0.1, 0.2).unwrap();
        assert_eq!(state.rls().round(), 2);
        policy_update(&mut state, &x2, -0.3, 0.05).unwrap();
        assert_eq!(state.rls().round(), 3);
        let batch = nalgebra::DMatrix::identity(2, 2) + &x1 * x1.transpose() + &x2 * x2.transpose();
        assert!((state.rls().gram() - batch).amax() <= 1e-15);
        assert!(policy_update(&mut state, &DVector::zeros(3), 0.0, 0.0).is_err());
    }

    #[test]
    fn estimate_moves_iff_observation_is_informative() {
        let inst = active();
        let mut state = PolicyState::new(PolicyKind::SafeLts, &inst, &PolicySettings::for_horizon(10)).unwrap();
        let before = state.rls().rls_estimate(Channel::Reward);
        policy_update(&mut state, &DVector::zeros(2), 0.7, 0.0).unwrap();
        assert_eq!(state.rls().rls_estimate(Channel::Reward), before);
        policy_update(&mut state, &DVector::from_vec(vec![1.0, 0.0]), 0.0, 0.0).unwrap();
        assert_eq!(state.rls().rls_estimate(Channel::Reward), before);
        policy_update(&mut state, &DVector::from_vec(vec![1.0, 0.0]), 1.0, 0.0).unwrap();
        // V = diag(3, 1), b = (1, 0)
        let est = state.rls().rls_estimate(Channel::Reward);
        assert_abs_diff_eq!(est[0], 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(est[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn alpha_examples() {
        let s = RlsState::new(1, 1.0).unwrap();
        let one = DVector::from_vec(vec![1.0]);
        assert_eq!(alpha_shrink(&one, &s, 0.0, 0.5), 1.0);
        assert_abs_diff_eq!(alpha_shrink(&one, &s, 1.0, 2.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn shrunk_optimum_is_in_doubled_set() {
        let inst = active();
        let mut state = PolicyState::new(PolicyKind::SafeLts, &inst, &PolicySettings::for_horizon(500)).unwrap();
        let mut prng = ChaCha8Rng::seed_from_u64(1);
        let mut erng = ChaCha8Rng::seed_from_u64(2);
        for t in 1..=500 {
            let beta = state.confidence().beta(t);
            let a = alpha_shrink(&inst.x_star, state.rls(), beta, inst.level);
            assert!(a > 0.0 && a <= 1.0);
            let m =
                crate::confidence::safe_margin(&(&inst.x_star * a), &inst.mu_star, state.rls(), 2.0 * beta, inst.level);
            assert!(m >= -1e-12);
            let dec = state.select(t, &mut prng).unwrap();
            let out = env_step(&inst, &dec.x, &mut erng).unwrap();
            policy_update(&mut state, &dec.x, out.reward, out.side_measurement).unwrap();
        }
    }

    #[test]
    fn optimism_probe_examples() {
        let inst = active();
        let settings = PolicySettings::for_horizon(100);
        let oracle = PolicyState::new(PolicyKind::OracleLts, &inst, &settings).unwrap();
        let rec = optimism_probe(&oracle, &inst, &inst.theta_star).unwrap();
        assert!(rec.sampled_optimistic);
        assert!(rec.alpha_t > 0.0 && rec.alpha_t <= 1.0);

        let mut safe = PolicyState::new(PolicyKind::SafeLts, &inst, &settings).unwrap();
        play(&mut safe, &inst, 50, 5);
        let doubled = &inst.theta_star * 2.0;
        let t = safe.rls().round();
        let con = safe.action_constraint(t).unwrap();
        let plain = safe_linear_max(&inst.theta_star, &con, &inst.bounds, settings.tol).unwrap().value;
        let rec = optimism_probe(&safe, &inst, &doubled).unwrap();
        assert_eq!(rec.sampled_optimistic, 2.0 * plain >= inst.opt_value - 2.0 * settings.tol);

        let lucb = PolicyState::new(PolicyKind::NaiveSafeLucb, &inst, &settings).unwrap();
        assert!(optimism_probe(&lucb, &inst, &inst.theta_star).is_err());
    }

    #[test]
    fn oracle_set_dominates_estimated_set() {
        let inst = active();
        let settings = PolicySettings::for_horizon(300);
        let mut safe = PolicyState::new(PolicyKind::SafeLts, &inst, &settings).unwrap();
        let oracle_mu = inst.mu_star.clone();
        let mut prng = ChaCha8Rng::seed_from_u64(8);
        let mut erng = ChaCha8Rng::seed_from_u64(9);
        for t in 1..=300 {
            let dec = safe.select(t, &mut prng).unwrap();
            let beta = safe.confidence().beta(t);
            let (_, z_hat) = estimates_covered(safe.rls(), &inst, beta);
            if z_hat {
                let theta = dec.theta_tilde.as_ref().unwrap();
                let (_, oracle_value) =
                    linear_max_single_linear_constraint(theta, &oracle_mu, inst.level, &inst.bounds).unwrap();
                assert!(oracle_value >= dec.value.unwrap() - 1e-9, "round {t}");
            }
            let out = env_step(&inst, &dec.x, &mut erng).unwrap();
            policy_update(&mut safe, &dec.x, out.reward, out.side_measurement).unwrap();
        }
    }

    #[test]
    fn dynamic_schedule_decays_to_floor() {
        let inst = active();
        let state = PolicyState::new(PolicyKind::DynamicSafeLts, &inst, &PolicySettings::for_horizon(1000)).unwrap();
        let p = state.perturbation().unwrap();
        assert_abs_diff_eq!(p.scale(0), p.inflation, epsilon = 1e-12);
        assert_eq!(p.scale(1000), 1.0);
        let oracle = PolicyState::new(PolicyKind::OracleLts, &inst, &PolicySettings::for_horizon(1000)).unwrap();
        assert_eq!(oracle.perturbation().unwrap().inflation, 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn every_safe_policy_action_is_estimated_safe(seed in 0u64..1000, k in 0usize..4) {
            let kind = [PolicyKind::SafeLts, PolicyKind::DynamicSafeLts, PolicyKind::NaiveSafeLucb, PolicyKind::InflatedSafeLucb][k];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = make_instance(&InstanceGenConfig::default(), &mut rng).unwrap();
            let settings = PolicySettings::for_horizon(50);
            let mut state = PolicyState::new(kind, &inst, &settings).unwrap();
            for t in 1..=30 {
                let dec = state.select(t, &mut rng).unwrap();
                let con = state.action_constraint(t).unwrap();
                prop_assert!(con.margin(&dec.x) >= -settings.tol);
                let out = env_step(&inst, &dec.x, &mut rng).unwrap();
                prop_assert!(!out.violated);
                policy_update(&mut state, &dec.x, out.reward, out.side_measurement).unwrap();
            }
        }
    }
}
