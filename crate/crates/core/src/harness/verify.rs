//! Statistical verification suite. Each check returns a [`VerifyEntry`] with
//! its measured value and threshold; failures are entries, not errors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{run_episode, ExperimentConfig, InstanceMode, SCHEMA_VERSION};
use crate::environment::{env_step, named_instance};
use crate::error::Result;
use crate::linalg::RlsState;
use crate::perturbation::{PerturbationSpec, TailMode, ANTI_CONCENTRATION_P};
use crate::policy::{optimism_probe, policy_update, PolicyKind, PolicyState};
use crate::rng::{stream, tag, Purpose};
use crate::solver::{grid_oracle, linear_max_single_linear_constraint, safe_linear_max, BoxSet, SocConstraint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyEntry {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub passed: bool,
    pub entries: Vec<VerifyEntry>,
}

/// Sample sizes of the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub tail_samples: usize,
    pub concentration_samples: usize,
    pub coverage_episodes: usize,
    pub coverage_horizon: usize,
    /// Minimum number of probed rounds with the coverage event holding.
    pub optimism_rounds: usize,
    pub solver_instances: usize,
    pub grid_step: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tail_samples: 1_000_000,
            concentration_samples: 100_000,
            coverage_episodes: 100,
            coverage_horizon: 1000,
            optimism_rounds: 5000,
            solver_instances: 100,
            grid_step: 0.005,
        }
    }
}

fn entry(name: &str, passed: bool, measured: f64, threshold: f64, detail: String) -> VerifyEntry {
    VerifyEntry { name: name.to_string(), passed, measured, threshold, detail }
}

fn verification_stream(cfg: &ExperimentConfig, name: &str) -> crate::rng::Stream {
    stream(cfg.base_seed, &[Purpose::Verification as u64, tag(name)])
}

/// Inflated perturbation for a unit-norm instance with `C = 0.5` in the config's box.
fn reference_spec(cfg: &ExperimentConfig) -> Result<PerturbationSpec> {
    let bounds = BoxSet::cube(cfg.dim, cfg.box_bounds[0], cfg.box_bounds[1])?;
    PerturbationSpec::for_safety(cfg.dim, bounds.action_bound(), 1.0, 0.5)
}

/// `P(uᵀη ≥ 1 + (2/C)LS)` within 0.01 of `Φ(−1)`.
pub fn check_anti_concentration(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<VerifyEntry> {
    let spec = reference_spec(cfg)?;
    let d = cfg.dim;
    let u = DVector::from_element(d, 1.0 / (d as f64).sqrt());
    let mode = TailMode::AntiConcentration { direction: u, threshold: spec.inflation };
    let est = spec.tail_probability_estimate(&mode, 1, opts.tail_samples, &mut verification_stream(cfg, "anti"))?;
    let err = (est.estimate - ANTI_CONCENTRATION_P).abs();
    Ok(entry(
        "anti_concentration",
        err <= 0.01,
        est.estimate,
        ANTI_CONCENTRATION_P,
        format!("|estimate - p| = {err:.2e} with {} samples (tolerance 0.01)", est.samples),
    ))
}

/// `P(‖η‖₂ > bound(δ)) ≤ δ`.
pub fn check_concentration(cfg: &ExperimentConfig, opts: &VerifyOptions, delta: f64) -> Result<VerifyEntry> {
    let spec = reference_spec(cfg)?;
    let bound = spec.concentration_bound(delta);
    let mode = TailMode::Concentration { bound };
    let est = spec.tail_probability_estimate(
        &mode,
        1,
        opts.concentration_samples,
        &mut verification_stream(cfg, &format!("conc{delta}")),
    )?;
    let rate = 1.0 - est.estimate;
    Ok(entry(
        &format!("concentration_delta_{delta}"),
        rate <= delta,
        rate,
        delta,
        format!("violation rate of ||eta|| <= {bound:.4}"),
    ))
}

/// Coverage and elliptical-potential measurements from Safe-LTS episodes on
/// random instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRun {
    pub episodes: usize,
    pub covered: usize,
    pub delta: f64,
    pub max_potential_ratio: f64,
}

pub fn coverage_run(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<CoverageRun> {
    let ep_cfg =
        ExperimentConfig { horizon: opts.coverage_horizon, delta: None, instance: InstanceMode::Random, ..cfg.clone() };
    let mut covered = 0;
    let mut ratio: f64 = 0.0;
    for i in 0..opts.coverage_episodes as u64 {
        let log = run_episode(&ep_cfg, PolicyKind::SafeLts, i)?;
        covered += log.summary.covered as usize;
        ratio = ratio.max(log.summary.potential / log.summary.potential_bound);
    }
    Ok(CoverageRun { episodes: opts.coverage_episodes, covered, delta: ep_cfg.delta(), max_potential_ratio: ratio })
}

/// Empirical `P(Ê_T ∩ Ẑ_T) ≥ 1 − δ/3`.
pub fn coverage_entry(run: &CoverageRun) -> VerifyEntry {
    let rate = run.covered as f64 / run.episodes as f64;
    let need = 1.0 - run.delta / 3.0;
    entry(
        "confidence_coverage",
        rate >= need,
        rate,
        need,
        format!("{} of {} episodes kept both estimates covered", run.covered, run.episodes),
    )
}

pub fn potential_entry(run: &CoverageRun) -> VerifyEntry {
    entry(
        "elliptical_potential",
        run.max_potential_ratio < 1.0,
        run.max_potential_ratio,
        1.0,
        "max over episodes of potential / (2d log(1 + T L^2 / lambda))".into(),
    )
}

/// Optimism frequency of Safe-LTS conditioned on the coverage event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimismRun {
    pub probed: usize,
    pub z_rounds: usize,
    pub optimistic_given_z: usize,
}

impl OptimismRun {
    pub fn frequency(&self) -> f64 {
        self.optimistic_given_z as f64 / self.z_rounds.max(1) as f64
    }
}

/// Plays Safe-LTS on the `active_constraint` instance, probing every round,
/// until at least `opts.optimism_rounds` probed rounds had the coverage event.
pub fn optimism_run(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<OptimismRun> {
    let inst = named_instance("active_constraint")?.build(cfg.noise)?;
    let horizon = opts.optimism_rounds.max(1);
    let settings = ExperimentConfig { horizon, delta: None, ..cfg.clone() }.settings();
    let mut rng = verification_stream(cfg, "optimism");
    let mut run = OptimismRun { probed: 0, z_rounds: 0, optimistic_given_z: 0 };
    for _episode in 0..100 {
        let mut state = PolicyState::new(PolicyKind::SafeLts, &inst, &settings)?;
        for t in 1..=horizon {
            let dec = state.select(t, &mut rng)?;
            let tilde = dec.theta_tilde.as_ref().expect("Thompson policy samples");
            let rec = optimism_probe(&state, &inst, tilde)?;
            run.probed += 1;
            if rec.z_event {
                run.z_rounds += 1;
                run.optimistic_given_z += rec.sampled_optimistic as usize;
            }
            let out = env_step(&inst, &dec.x, &mut rng)?;
            policy_update(&mut state, &dec.x, out.reward, out.side_measurement)?;
        }
        if run.z_rounds >= opts.optimism_rounds {
            break;
        }
    }
    Ok(run)
}

pub fn optimism_entry(run: &OptimismRun) -> VerifyEntry {
    let need = ANTI_CONCENTRATION_P / 2.0 - 0.03;
    entry(
        "optimism_frequency",
        run.frequency() >= need && run.z_rounds > 0,
        run.frequency(),
        need,
        format!("{} optimistic of {} covered rounds ({} probed)", run.optimistic_given_z, run.z_rounds, run.probed),
    )
}

/// Worst discrepancies of both solvers against the grid oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRun {
    pub instances: usize,
    /// Instances where `|soc − grid| > max(1e-3, step·‖c‖₁)`.
    pub soc_failures: usize,
    pub soc_worst_excess: f64,
    /// Instances where the knapsack value is below the grid or more than one step above it.
    pub knapsack_failures: usize,
    pub knapsack_worst_excess: f64,
}

pub fn solver_run(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<SolverRun> {
    let mut rng = verification_stream(cfg, "solver");
    let bounds = BoxSet::cube(2, -1.0, 1.0)?;
    let step = opts.grid_step;
    let mut run = SolverRun {
        instances: opts.solver_instances,
        soc_failures: 0,
        soc_worst_excess: f64::NEG_INFINITY,
        knapsack_failures: 0,
        knapsack_worst_excess: f64::NEG_INFINITY,
    };
    for _ in 0..opts.solver_instances {
        let mut state = RlsState::new(2, 1.0)?;
        for _ in 0..rng.random_range(0..80) {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            state.gram_update(&x, 0.0, 0.0)?;
        }
        let c = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let a = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let beta = rng.random_range(0.0..2.0);
        let level = rng.random_range(0.05..1.0);

        let con = SocConstraint::from_state(a.clone(), beta, &state, level)?;
        let sol = safe_linear_max(&c, &con, &bounds, cfg.solver_tol)?;
        let (_, grid) = grid_oracle(&c, |x| con.margin(x) >= 0.0, &bounds, step)?;
        let tol = (1e-3f64).max(step * c.lp_norm(1));
        let excess = (sol.value - grid).abs() - tol;
        run.soc_worst_excess = run.soc_worst_excess.max(excess);
        run.soc_failures += (excess > 0.0) as usize;

        let (_, exact) = linear_max_single_linear_constraint(&c, &a, level, &bounds)?;
        let (_, lp_grid) = grid_oracle(&c, |x| a.dot(x) <= level, &bounds, step)?;
        let lp_excess = (exact - lp_grid - step * c.lp_norm(1)).max(lp_grid - exact);
        run.knapsack_worst_excess = run.knapsack_worst_excess.max(lp_excess);
        run.knapsack_failures += (lp_excess > 0.0) as usize;
    }
    Ok(run)
}

pub fn solver_entries(run: &SolverRun) -> [VerifyEntry; 2] {
    [
        entry(
            "solver_soc_vs_grid",
            run.soc_failures == 0,
            run.soc_worst_excess,
            0.0,
            format!("{} of {} instances outside tolerance", run.soc_failures, run.instances),
        ),
        entry(
            "solver_knapsack_vs_grid",
            run.knapsack_failures == 0,
            run.knapsack_worst_excess,
            0.0,
            format!("{} of {} instances outside one grid step", run.knapsack_failures, run.instances),
        ),
    ]
}

/// Sherman–Morrison drift against direct inversion after `updates` rank-one updates.
pub fn inverse_drift(cfg: &ExperimentConfig, updates: usize) -> Result<f64> {
    let mut rng = verification_stream(cfg, "inverse");
    let d = cfg.dim;
    let mut state = RlsState::new(d, cfg.lambda)?;
    for _ in 0..updates {
        let x = DVector::from_fn(d, |_, _| rng.random_range(cfg.box_bounds[0]..cfg.box_bounds[1]));
        state.gram_update(&x, 0.0, 0.0)?;
    }
    let direct = crate::linalg::direct_inverse(state.gram())?;
    Ok((state.gram_inv() - direct).amax())
}

/// `‖(V^{-1/2})² V − I‖_max` for the Gram matrix of random updates.
pub fn inv_sqrt_residual(cfg: &ExperimentConfig, updates: usize) -> Result<f64> {
    let mut rng = verification_stream(cfg, "inv_sqrt");
    let d = cfg.dim;
    let mut state = RlsState::new(d, cfg.lambda)?;
    for _ in 0..updates {
        let x = DVector::from_fn(d, |_, _| rng.random_range(cfg.box_bounds[0]..cfg.box_bounds[1]));
        state.gram_update(&x, 0.0, 0.0)?;
    }
    let root = crate::linalg::inv_sqrt_factor(state.gram())?;
    Ok((&root * &root * state.gram() - DMatrix::identity(d, d)).amax())
}

/// Runs every check and collects the report.
pub fn verify_properties(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut entries = vec![check_anti_concentration(cfg, opts)?];
    for delta in [0.1, 0.01] {
        entries.push(check_concentration(cfg, opts, delta)?);
    }
    let cov = coverage_run(cfg, opts)?;
    entries.push(coverage_entry(&cov));
    entries.push(potential_entry(&cov));
    entries.push(optimism_entry(&optimism_run(cfg, opts)?));
    entries.extend(solver_entries(&solver_run(cfg, opts)?));
    let drift = inverse_drift(cfg, 10_000)?;
    entries.push(entry("sherman_morrison_drift", drift <= 1e-8, drift, 1e-8, "after 10^4 updates".into()));
    let res = inv_sqrt_residual(cfg, 1000)?;
    entries.push(entry("inv_sqrt_residual", res <= 1e-8, res, 1e-8, "after 10^3 updates".into()));
    let passed = entries.iter().all(|e| e.passed);
    Ok(VerifyReport { schema_version: SCHEMA_VERSION, passed, entries })
}
