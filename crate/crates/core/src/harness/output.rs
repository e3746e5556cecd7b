//! CSV, JSON and gnuplot emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{BatchSummary, ExperimentConfig};
use crate::environment::EpisodeLog;
use crate::error::{Error, Result};

pub const CURVES_FILE: &str = "curves.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const VERIFY_FILE: &str = "verify.json";
pub const PLOT_FILE: &str = "plot.gp";
pub const MEAN_FILE: &str = "mean_regret.csv";

pub const CURVE_COLUMNS: [&str; 13] = [
    "run_id",
    "policy",
    "seed",
    "t",
    "x",
    "reward",
    "side_measurement",
    "true_margin",
    "inst_regret",
    "cum_regret",
    "violated",
    "optimistic",
    "z_event",
];

/// Shortest round-trip form; switches to exponent notation for tiny or huge values.
fn num(v: f64) -> String {
    format!("{v:?}")
}

/// One row per (run, round), in the order of `logs`.
pub fn write_curves(path: &Path, logs: &[EpisodeLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_COLUMNS)?;
    for log in logs {
        let run_id = log.run_id();
        let seed = log.seed.to_string();
        for r in &log.rounds {
            let x = r.x.iter().map(|v| num(*v)).collect::<Vec<_>>().join(";");
            w.write_record([
                run_id.as_str(),
                log.policy.as_str(),
                seed.as_str(),
                &r.t.to_string(),
                &x,
                &num(r.reward),
                &num(r.side_measurement),
                &num(r.true_margin),
                &num(r.inst_regret),
                &num(r.cum_regret),
                &r.violated.to_string(),
                &r.optimistic.to_string(),
                &r.z_event.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t` followed by `<policy>_mean, <policy>_std` column pairs.
pub fn write_mean_curves(path: &Path, summary: &BatchSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    for p in &summary.policies {
        header.push(format!("{}_mean", p.policy));
        header.push(format!("{}_std", p.policy));
    }
    w.write_record(&header)?;
    for t in 0..summary.config.horizon {
        let mut row = vec![(t + 1).to_string()];
        for p in &summary.policies {
            row.push(num(p.mean_regret[t]));
            row.push(num(p.std_regret[t]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// A gnuplot script drawing mean cumulative regret with one-std bands from
/// `mean_regret.csv`.
pub fn plot_script(summary: &BatchSummary) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key top left\n");
    s.push_str("set xlabel 'round'\n");
    s.push_str("set ylabel 'cumulative regret'\n");
    s.push_str("set terminal pngcairo size 900,600\n");
    s.push_str("set output 'regret.png'\n");
    let mut parts = Vec::new();
    for (i, p) in summary.policies.iter().enumerate() {
        let m = 2 + 2 * i;
        let sd = m + 1;
        parts.push(format!(
            "'{MEAN_FILE}' every ::1 using 1:(${m}-${sd}):(${m}+${sd}) with filledcurves fs transparent solid 0.2 lc {} notitle",
            i + 1
        ));
        parts.push(format!("'{MEAN_FILE}' every ::1 using 1:{m} with lines lw 2 lc {} title '{}'", i + 1, p.policy));
    }
    s.push_str("plot ");
    s.push_str(&parts.join(", \\\n     "));
    s.push('\n');
    s
}

pub fn write_plot(path: &Path, summary: &BatchSummary) -> Result<()> {
    fs::write(path, plot_script(summary))?;
    Ok(())
}

/// Whether `dir` already holds the outputs of a batch run with `cfg`.
/// Outputs from a different config are an error.
pub fn batch_is_complete(dir: &Path, cfg: &ExperimentConfig) -> Result<bool> {
    let summary = dir.join(SUMMARY_FILE);
    if !(summary.exists() && dir.join(CURVES_FILE).exists()) {
        return Ok(false);
    }
    let previous: BatchSummary = serde_json::from_slice(&fs::read(&summary)?)?;
    if &previous.config != cfg {
        return Err(Error::InvalidParameter(format!(
            "{} holds results for a different config; pass --force to overwrite",
            dir.display()
        )));
    }
    Ok(true)
}

/// Writes curves, summary, mean curves and the plot script; returns the paths.
pub fn write_batch(dir: &Path, summary: &BatchSummary, logs: &[EpisodeLog]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let paths = [CURVES_FILE, MEAN_FILE, PLOT_FILE, SUMMARY_FILE].map(|f| dir.join(f));
    write_curves(&paths[0], logs)?;
    write_mean_curves(&paths[1], summary)?;
    write_plot(&paths[2], summary)?;
    // summary last: its presence marks a complete batch
    write_json(&paths[3], summary)?;
    Ok(paths.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_batch, ExperimentConfig};
    use crate::policy::PolicyKind;

    #[test]
    fn curves_have_one_row_per_round() {
        let cfg = ExperimentConfig {
            horizon: 12,
            n_seeds: 2,
            policies: vec![PolicyKind::SafeLts, PolicyKind::SafeLucb],
            ..ExperimentConfig::default()
        };
        let batch = run_batch(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_batch(dir.path(), &batch.summary, &batch.logs).unwrap();
        let mut r = csv::Reader::from_path(dir.path().join(CURVES_FILE)).unwrap();
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), CURVE_COLUMNS);
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 12 * 2 * 2);
        assert_eq!(rows[0][4].split(';').count(), 2);
        assert!(batch_is_complete(dir.path(), &cfg).unwrap());
        let other = ExperimentConfig { horizon: 13, ..cfg };
        assert!(batch_is_complete(dir.path(), &other).is_err());
        let script = fs::read_to_string(dir.path().join(PLOT_FILE)).unwrap();
        assert!(script.contains("safe_lucb"));
    }
}
