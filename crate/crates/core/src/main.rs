use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use safe_lts::environment::named_instances;
use safe_lts::harness::output::{
    batch_is_complete, write_batch, write_curves, write_json, CURVES_FILE, SUMMARY_FILE, VERIFY_FILE,
};
use safe_lts::harness::{run_batch, run_episode, verify_properties, ExperimentConfig, Profile, VerifyOptions};
use safe_lts::policy::PolicyKind;

#[derive(Parser)]
#[command(name = "safe-lts", version, about = "Safe linear bandit simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON file whose keys override the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed index for `run`, base seed for `batch` and `verify`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), safe_lts::Error> {
        let cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_over(self.profile, &fs::read_to_string(path)?)?,
            None => ExperimentConfig::profile(self.profile),
        };
        let out = self.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out));
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a single episode.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "safe_lts")]
        policy: PolicyKind,
    },
    /// Run every configured policy over `n_seeds` episodes.
    Batch {
        #[command(flatten)]
        common: Common,
        /// Recompute even when outputs already exist.
        #[arg(long)]
        force: bool,
    },
    /// Run the statistical verification suite.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Built-in problem instances.
    Instances {
        #[command(subcommand)]
        action: InstancesAction,
    },
}

#[derive(Subcommand)]
enum InstancesAction {
    List,
}

fn execute(cli: Cli) -> Result<bool, safe_lts::Error> {
    match cli.command {
        Command::Run { common, policy } => {
            let (cfg, out) = common.load()?;
            let log = run_episode(&cfg, policy, common.seed.unwrap_or(0))?;
            fs::create_dir_all(&out)?;
            write_curves(&out.join(CURVES_FILE), std::slice::from_ref(&log))?;
            write_json(&out.join(SUMMARY_FILE), &log.summary)?;
            println!(
                "{}: {} rounds, regret {:.4}, {} violations",
                log.run_id(),
                log.summary.rounds,
                log.summary.final_regret,
                log.summary.violations
            );
            report_outputs(&out);
            Ok(log.summary.failure.is_none())
        }
        Command::Batch { common, force } => {
            let (mut cfg, out) = common.load()?;
            if let Some(s) = common.seed {
                cfg.base_seed = s;
            }
            if !force && batch_is_complete(&out, &cfg)? {
                println!("outputs in {} are up to date; pass --force to recompute", out.display());
                return Ok(true);
            }
            let batch = run_batch(&cfg)?;
            write_batch(&out, &batch.summary, &batch.logs)?;
            for p in &batch.summary.policies {
                println!(
                    "{:<20} final regret {:>10.3} ± {:<9.3} violations {:>4} failed {}",
                    p.policy.as_str(),
                    p.final_mean,
                    p.final_std,
                    p.violations,
                    p.failed
                );
            }
            for f in &batch.summary.failures {
                eprintln!("episode failed: {f}");
            }
            report_outputs(&out);
            Ok(batch.summary.failures.is_empty())
        }
        Command::Verify { common } => {
            let (mut cfg, out) = common.load()?;
            if let Some(s) = common.seed {
                cfg.base_seed = s;
            }
            let report = verify_properties(&cfg, &VerifyOptions::default())?;
            fs::create_dir_all(&out)?;
            write_json(&out.join(VERIFY_FILE), &report)?;
            for e in &report.entries {
                println!(
                    "{} {:<28} measured {:.6} threshold {:.6}",
                    if e.passed { "PASS" } else { "FAIL" },
                    e.name,
                    e.measured,
                    e.threshold
                );
            }
            report_outputs(&out);
            Ok(report.passed)
        }
        Command::Instances { action: InstancesAction::List } => {
            for (name, about, spec) in named_instances() {
                println!(
                    "{name:<28} theta_star={:?} mu_star={:?} C={}  {about}",
                    spec.theta_star, spec.mu_star, spec.level
                );
            }
            Ok(true)
        }
    }
}

fn report_outputs(dir: &Path) {
    info!("outputs written to {}", dir.display());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
