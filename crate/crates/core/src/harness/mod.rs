//! Seeded experiment runner: single episodes, multi-seed batches and the
//! statistical verification suite.
//!
//! Seeds: episode `i` of a batch uses `derive_seed(base_seed, [i])`. The
//! instance and environment noise streams depend only on that seed, so every
//! policy faces the same instance and the same noise sequence (common random
//! numbers); perturbation and exploration streams additionally depend on the
//! policy name.

pub mod output;
pub mod verify;

use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{
    env_step, make_instance, named_instance, EpisodeLog, EpisodeSummary, InstanceGenConfig, InstanceSpec,
    ProblemInstance, RoundRecord,
};
use crate::error::{Error, Result};
use crate::linalg::{elliptical_potential_bound, Channel};
use crate::perturbation::DEFAULT_FLOOR;
use crate::policy::{
    alpha_shrink, estimates_covered, policy_update, PolicyKind, PolicySettings, PolicyState, DEFAULT_EXPLORE_HORIZON,
};
use crate::rng::{derive_seed, policy_stream, shared_stream, Purpose};
use crate::solver::DEFAULT_TOL;

pub use verify::{verify_properties, VerifyEntry, VerifyOptions, VerifyReport};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// T = 2000, d = 2, 20 seeds.
    Desk,
    /// T = 10000, d = 4, 20 seeds.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InstanceMode {
    /// A fresh random instance per seed.
    Random,
    /// A built-in instance, see [`crate::environment::named_instances`].
    Named {
        name: String,
    },
    Inline {
        spec: InstanceSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "d")]
    pub dim: usize,
    /// Cube `[lo, hi]^d` for random instances.
    #[serde(rename = "box")]
    pub box_bounds: [f64; 2],
    #[serde(rename = "R")]
    pub noise: f64,
    pub lambda: f64,
    /// Defaults to `1/(4T)`.
    pub delta: Option<f64>,
    pub policies: Vec<PolicyKind>,
    pub n_seeds: usize,
    pub base_seed: u64,
    pub instance: InstanceMode,
    /// Range of the safety level `C` for random instances.
    pub level_range: [f64; 2],
    pub schedule_floor: f64,
    pub solver_tol: f64,
    pub explore_horizon: usize,
    pub out: String,
    /// Progress is logged every this many rounds (0 disables).
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let (horizon, dim) = match profile {
            Profile::Desk => (2000, 2),
            Profile::Paper => (10_000, 4),
        };
        Self {
            horizon,
            dim,
            box_bounds: [-1.0, 1.0],
            noise: 0.1,
            lambda: 1.0,
            delta: None,
            policies: PolicyKind::ALL.to_vec(),
            n_seeds: 20,
            base_seed: 0,
            instance: InstanceMode::Random,
            level_range: [0.05, 1.0],
            schedule_floor: DEFAULT_FLOOR,
            solver_tol: DEFAULT_TOL,
            explore_horizon: DEFAULT_EXPLORE_HORIZON,
            out: "results".into(),
            checkpoint_every: 0,
        }
    }

    /// Parses a JSON config whose keys override `profile`.
    pub fn from_json_over(profile: Profile, json: &str) -> Result<Self> {
        let mut base = serde_json::to_value(Self::profile(profile))?;
        let patch: serde_json::Value = serde_json::from_str(json)?;
        let serde_json::Value::Object(patch) = patch else {
            return Err(Error::InvalidParameter("config file must hold a JSON object".into()));
        };
        let obj = base.as_object_mut().expect("config serializes to an object");
        for (k, v) in patch {
            obj.insert(k, v);
        }
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(1.0 / (4.0 * self.horizon.max(1) as f64))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.horizon == 0 {
            return bad("T must be at least 1");
        }
        if self.n_seeds == 0 {
            return bad("n_seeds must be at least 1");
        }
        if self.dim == 0 {
            return bad("d must be at least 1");
        }
        let delta = self.delta();
        if !(delta > 0.0 && delta < 1.0) {
            return bad("delta must lie in (0,1)");
        }
        if self.policies.is_empty() {
            return bad("at least one policy is required");
        }
        if !(self.level_range[0] > 0.0 && self.level_range[0] <= self.level_range[1]) {
            return bad("level_range must be positive and ordered");
        }
        Ok(())
    }

    pub fn settings(&self) -> PolicySettings {
        PolicySettings {
            lambda: self.lambda,
            delta: self.delta(),
            horizon: self.horizon,
            tol: self.solver_tol,
            explore_horizon: self.explore_horizon,
            schedule_floor: self.schedule_floor,
        }
    }

    pub fn episode_seed(&self, seed_index: u64) -> u64 {
        derive_seed(self.base_seed, &[seed_index])
    }

    fn generator(&self) -> InstanceGenConfig {
        InstanceGenConfig {
            dim: self.dim,
            box_lower: self.box_bounds[0],
            box_upper: self.box_bounds[1],
            noise: self.noise,
            level_min: self.level_range[0],
            level_max: self.level_range[1],
        }
    }

    /// The instance faced by every policy on episode `seed_index`.
    pub fn instance_for(&self, seed_index: u64) -> Result<ProblemInstance> {
        match &self.instance {
            InstanceMode::Random => {
                let mut rng = shared_stream(self.episode_seed(seed_index), Purpose::Instance);
                make_instance(&self.generator(), &mut rng)
            }
            InstanceMode::Named { name } => named_instance(name)?.build(self.noise),
            InstanceMode::Inline { spec } => spec.build(self.noise),
        }
    }
}

/// Runs one episode. Configuration errors are returned as `Err`; a failure
/// during the episode yields a partial log with `summary.failure` set.
pub fn run_episode(cfg: &ExperimentConfig, kind: PolicyKind, seed_index: u64) -> Result<EpisodeLog> {
    cfg.validate()?;
    let inst = cfg.instance_for(seed_index)?;
    run_episode_on(cfg, kind, seed_index, inst)
}

pub fn run_episode_on(
    cfg: &ExperimentConfig,
    kind: PolicyKind,
    seed_index: u64,
    inst: ProblemInstance,
) -> Result<EpisodeLog> {
    let seed = cfg.episode_seed(seed_index);
    let mut state = PolicyState::new(kind, &inst, &cfg.settings())?;
    let mut env_rng = shared_stream(seed, Purpose::Environment);
    let purpose = if kind == PolicyKind::SafeLucb { Purpose::Exploration } else { Purpose::Perturbation };
    let mut pol_rng = policy_stream(seed, kind.as_str(), purpose);

    let mut rounds = Vec::with_capacity(cfg.horizon);
    let mut cum = 0.0;
    let (mut e_hat_all, mut z_hat_all, mut e_tilde_all) = (true, true, true);
    let mut potential = 0.0;
    let mut min_margin = f64::INFINITY;
    let mut failure = None;

    for t in 1..=cfg.horizon {
        let beta = state.confidence().beta(t);
        let (e_hat, z_hat) = estimates_covered(state.rls(), &inst, beta);
        e_hat_all &= e_hat;
        z_hat_all &= z_hat;
        let alpha = alpha_shrink(&inst.x_star, state.rls(), beta, inst.level);

        let dec = match state.select(t, &mut pol_rng) {
            Ok(d) => d,
            Err(e) => {
                failure = Some(format!("round {t}: {e}"));
                break;
            }
        };
        let e_tilde = match (&dec.theta_tilde, state.sample_radius(t)) {
            (Some(tilde), Some(gamma)) => {
                let dev = tilde - state.rls().rls_estimate(Channel::Reward);
                e_tilde_all &= state.rls().gram_norm(&dev) <= gamma;
                Some(e_tilde_all)
            }
            _ => None,
        };
        let margin = state.action_constraint(t)?.margin(&dec.x);
        min_margin = min_margin.min(margin);
        potential += state.rls().inv_norm(&dec.x).powi(2);

        let out = match env_step(&inst, &dec.x, &mut env_rng) {
            Ok(o) => o,
            Err(e) => {
                failure = Some(format!("round {t}: {e}"));
                break;
            }
        };
        if let Err(e) = policy_update(&mut state, &dec.x, out.reward, out.side_measurement) {
            failure = Some(format!("round {t}: {e}"));
            break;
        }
        cum += out.inst_regret;
        rounds.push(RoundRecord {
            t,
            x: dec.x.iter().copied().collect(),
            reward: out.reward,
            side_measurement: out.side_measurement,
            true_margin: out.true_margin,
            inst_regret: out.inst_regret,
            cum_regret: cum,
            violated: out.violated,
            optimistic: dec.value.is_some_and(|v| v >= inst.opt_value),
            e_hat: e_hat_all,
            z_hat: z_hat_all,
            z_event: e_hat_all && z_hat_all,
            e_tilde,
            alpha,
        });
        if cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0 {
            info!("{kind} seed {seed_index}: round {t}/{}, regret {cum:.3}", cfg.horizon);
        }
    }
    if let Some(f) = &failure {
        warn!("{kind} seed {seed_index} failed at {f}");
    }

    let summary = EpisodeSummary {
        rounds: rounds.len(),
        final_regret: cum,
        violations: rounds.iter().filter(|r| r.violated).count(),
        optimistic_rounds: rounds.iter().filter(|r| r.optimistic).count(),
        z_rounds: rounds.iter().filter(|r| r.z_event).count(),
        optimistic_given_z: rounds.iter().filter(|r| r.z_event && r.optimistic).count(),
        covered: rounds.last().is_some_and(|r| r.z_event),
        e_tilde_held: rounds.last().and_then(|r| r.e_tilde),
        potential,
        potential_bound: elliptical_potential_bound(inst.dim(), rounds.len(), inst.action_bound, cfg.lambda),
        min_estimated_margin: min_margin,
        failure,
    };
    Ok(EpisodeLog { policy: kind.as_str().to_string(), seed: seed_index, instance: inst, rounds, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub episodes: usize,
    pub failed: usize,
    /// Per-round mean and sample std of cumulative regret over completed episodes.
    pub mean_regret: Vec<f64>,
    pub std_regret: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    pub violations: usize,
    pub optimism_frequency: f64,
    /// Optimistic fraction among rounds where `z_event` held.
    pub optimism_given_z: f64,
    /// Fraction of episodes whose estimates stayed covered throughout.
    pub coverage_rate: f64,
    pub max_potential_ratio: f64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub policies: Vec<PolicySummary>,
    pub failures: Vec<String>,
    pub wall_clock_secs: f64,
}

impl BatchSummary {
    pub fn policy(&self, kind: PolicyKind) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.policy == kind)
    }
}

/// Output of [`run_batch`]: the aggregate plus the per-episode logs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub summary: BatchSummary,
    pub logs: Vec<EpisodeLog>,
}

/// Runs `n_seeds` episodes per policy in parallel and aggregates them.
pub fn run_batch(cfg: &ExperimentConfig) -> Result<Batch> {
    cfg.validate()?;
    let start = Instant::now();
    let instances: Vec<ProblemInstance> =
        (0..cfg.n_seeds as u64).map(|i| cfg.instance_for(i)).collect::<Result<_>>()?;
    let jobs: Vec<(PolicyKind, u64)> =
        cfg.policies.iter().flat_map(|&k| (0..cfg.n_seeds as u64).map(move |i| (k, i))).collect();
    let timed: Vec<(EpisodeLog, f64)> = jobs
        .par_iter()
        .map(|&(kind, i)| {
            let t0 = Instant::now();
            let log = run_episode_on(cfg, kind, i, instances[i as usize].clone())?;
            Ok((log, t0.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    let (logs, secs): (Vec<_>, Vec<_>) = timed.into_iter().unzip();
    let policies = cfg
        .policies
        .iter()
        .map(|&k| {
            let idx: Vec<usize> = (0..logs.len()).filter(|&j| logs[j].policy == k.as_str()).collect();
            let mine: Vec<&EpisodeLog> = idx.iter().map(|&j| &logs[j]).collect();
            let mut s = aggregate(k, &mine, cfg.horizon);
            s.wall_clock_secs = idx.iter().map(|&j| secs[j]).sum();
            s
        })
        .collect();
    let failures =
        logs.iter().filter_map(|l| l.summary.failure.as_ref().map(|f| format!("{}: {f}", l.run_id()))).collect();
    Ok(Batch {
        summary: BatchSummary {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            policies,
            failures,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
        logs,
    })
}

/// Aggregates one policy's episodes; the result does not depend on the order
/// of `logs`.
pub fn aggregate(kind: PolicyKind, logs: &[&EpisodeLog], horizon: usize) -> PolicySummary {
    let mut sorted: Vec<&EpisodeLog> = logs.to_vec();
    sorted.sort_by_key(|l| l.seed);
    let done: Vec<&EpisodeLog> = sorted.iter().copied().filter(|l| l.summary.failure.is_none()).collect();
    let n = done.len();
    let mut mean = vec![0.0; horizon];
    let mut std = vec![0.0; horizon];
    if n > 0 {
        for t in 0..horizon {
            let vals: Vec<f64> = done.iter().map(|l| l.rounds[t].cum_regret).collect();
            let m = vals.iter().sum::<f64>() / n as f64;
            mean[t] = m;
            if n > 1 {
                std[t] = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let total_rounds: usize = sorted.iter().map(|l| l.summary.rounds).sum();
    let z_rounds: usize = sorted.iter().map(|l| l.summary.z_rounds).sum();
    PolicySummary {
        policy: kind,
        episodes: sorted.len(),
        failed: sorted.len() - n,
        final_mean: mean.last().copied().unwrap_or(0.0),
        final_std: std.last().copied().unwrap_or(0.0),
        mean_regret: mean,
        std_regret: std,
        violations: sorted.iter().map(|l| l.summary.violations).sum(),
        optimism_frequency: ratio(sorted.iter().map(|l| l.summary.optimistic_rounds).sum(), total_rounds),
        optimism_given_z: ratio(sorted.iter().map(|l| l.summary.optimistic_given_z).sum(), z_rounds),
        coverage_rate: ratio(sorted.iter().filter(|l| l.summary.covered).count(), sorted.len()),
        max_potential_ratio: sorted.iter().map(|l| l.summary.potential / l.summary.potential_bound).fold(0.0, f64::max),
        wall_clock_secs: 0.0,
    }
}
