//! Batches of missions with an aggregate table; a failing run is recorded
//! and the batch continues.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{self, Result};

use super::config::RunConfig;
use super::output::write_run;
use super::report::{MissionReport, Outcome};
use super::run::run_mission;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub preset: String,
    pub seed: u64,
    /// `None` when the run aborted, with the reason in `error`.
    pub report: Option<MissionReport>,
    pub error: Option<String>,
}

impl BatchRow {
    pub fn outcome_name(&self) -> &'static str {
        self.report.as_ref().map_or("ERROR", |r| r.outcome.name())
    }

    pub fn succeeded(&self) -> bool {
        self.report.as_ref().is_some_and(|r| r.outcome == Outcome::Success)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetAggregate {
    pub preset: String,
    pub runs: usize,
    pub successes: usize,
    pub mean_explore_speed: f64,
    pub min_clearance: Option<f64>,
    pub artifacts_truth: usize,
    pub artifacts_localized: usize,
    pub false_positives: usize,
}

impl PresetAggregate {
    pub fn recall(&self) -> f64 {
        if self.artifacts_truth == 0 {
            1.0
        } else {
            self.artifacts_localized as f64 / self.artifacts_truth as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub rows: Vec<BatchRow>,
    pub presets: Vec<PresetAggregate>,
}

impl BatchSummary {
    pub fn all_succeeded(&self) -> bool {
        self.rows.iter().all(BatchRow::succeeded)
    }

    pub fn successes(&self) -> usize {
        self.rows.iter().filter(|r| r.succeeded()).count()
    }

    /// Fixed-width table, one row per run followed by per-preset totals.
    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:<20} {:>5} {:<8} {:>8} {:>9} {:>9} {:>9} {:>9} {:>4}",
            "preset", "seed", "outcome", "dist_m", "v_expl", "min_clr", "ret_err", "artifacts", "fp"
        )
        .ok();
        for row in &self.rows {
            match &row.report {
                Some(r) => writeln!(
                    s,
                    "{:<20} {:>5} {:<8} {:>8.1} {:>9.2} {:>9.2} {:>9.2} {:>9} {:>4}",
                    r.preset,
                    r.seed,
                    r.outcome.name(),
                    r.distance,
                    r.explore_mean_speed,
                    r.min_clearance.unwrap_or(f64::NAN),
                    r.return_error,
                    format!("{}/{}", r.artifacts.localized, r.artifacts.ground_truth),
                    r.artifacts.false_positives
                ),
                None => writeln!(s, "{:<20} {:>5} ERROR    {}", row.preset, row.seed, row.error.as_deref().unwrap_or("")),
            }
            .ok();
        }
        writeln!(s).ok();
        writeln!(s, "{:<20} {:>8} {:>9} {:>9} {:>9} {:>4}", "preset", "success", "v_expl", "min_clr", "recall", "fp").ok();
        for p in &self.presets {
            writeln!(
                s,
                "{:<20} {:>8} {:>9.2} {:>9.2} {:>9} {:>4}",
                p.preset,
                format!("{}/{}", p.successes, p.runs),
                p.mean_explore_speed,
                p.min_clearance.unwrap_or(f64::NAN),
                format!("{}/{}", p.artifacts_localized, p.artifacts_truth),
                p.false_positives
            )
            .ok();
        }
        s
    }

    /// One delimited line per run.
    pub fn csv(&self) -> String {
        let mut s = String::from(
            "preset,seed,outcome,distance,mean_speed,explore_mean_speed,min_clearance,return_error,localized,ground_truth,false_positives,error\n",
        );
        for row in &self.rows {
            match &row.report {
                Some(r) => writeln!(
                    s,
                    "{},{},{},{:.3},{:.3},{:.3},{},{:.3},{},{},{},",
                    r.preset,
                    r.seed,
                    r.outcome.name(),
                    r.distance,
                    r.mean_speed,
                    r.explore_mean_speed,
                    r.min_clearance.map(|c| format!("{c:.3}")).unwrap_or_default(),
                    r.return_error,
                    r.artifacts.localized,
                    r.artifacts.ground_truth,
                    r.artifacts.false_positives
                ),
                None => writeln!(
                    s,
                    "{},{},ERROR,,,,,,,,,\"{}\"",
                    row.preset,
                    row.seed,
                    row.error.as_deref().unwrap_or("").replace('"', "'")
                ),
            }
            .ok();
        }
        s
    }
}

fn aggregate(rows: &[BatchRow]) -> Vec<PresetAggregate> {
    let mut names: Vec<&str> = vec![];
    for r in rows {
        if !names.contains(&r.preset.as_str()) {
            names.push(&r.preset);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let group: Vec<&BatchRow> = rows.iter().filter(|r| r.preset == name).collect();
            let reports: Vec<&MissionReport> = group.iter().filter_map(|r| r.report.as_ref()).collect();
            let n = reports.len().max(1) as f64;
            PresetAggregate {
                preset: name.into(),
                runs: group.len(),
                successes: group.iter().filter(|r| r.succeeded()).count(),
                mean_explore_speed: reports.iter().map(|r| r.explore_mean_speed).sum::<f64>() / n,
                min_clearance: reports.iter().filter_map(|r| r.min_clearance).reduce(f64::min),
                artifacts_truth: reports.iter().map(|r| r.artifacts.ground_truth).sum(),
                artifacts_localized: reports.iter().map(|r| r.artifacts.localized).sum(),
                false_positives: reports.iter().map(|r| r.artifacts.false_positives).sum(),
            }
        })
        .collect()
}

/// Message with its chain of causes.
fn describe(e: &dyn std::error::Error) -> String {
    let mut s = e.to_string();
    let mut cause = e.source();
    while let Some(c) = cause {
        write!(s, ": {c}").ok();
        cause = c.source();
    }
    s
}

/// Runs every configuration in order. With `out`, each run writes into
/// `out/<preset>_seed<seed>/` and the summary goes to `out/summary.{csv,txt}`.
pub fn run_batch(configs: &[RunConfig], out: Option<&Path>) -> Result<BatchSummary> {
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        let run_dir = out.map(|d| d.join(format!("{}_seed{}", cfg.preset, cfg.seed)));
        let mut cfg = cfg.clone();
        cfg.output.dir = run_dir.clone();
        log::info!("batch: {} seed {}", cfg.preset, cfg.seed);
        let row = match run_mission(&cfg) {
            Ok(o) => {
                let report = match &run_dir {
                    Some(d) => write_run(d, &o)?,
                    None => o.report,
                };
                log::info!("batch: {} seed {} -> {}", cfg.preset, cfg.seed, report.outcome.name());
                BatchRow { preset: cfg.preset.clone(), seed: cfg.seed, report: Some(report), error: None }
            }
            Err(e) => {
                log::error!("batch: {} seed {} aborted: {e}", cfg.preset, cfg.seed);
                BatchRow { preset: cfg.preset.clone(), seed: cfg.seed, report: None, error: Some(describe(&e)) }
            }
        };
        rows.push(row);
    }
    let summary = BatchSummary { presets: aggregate(&rows), rows };
    if let Some(d) = out {
        std::fs::create_dir_all(d).map_err(|e| error::io(d, e))?;
        for (name, text) in [("summary.csv", summary.csv()), ("summary.txt", summary.table())] {
            let p = d.join(name);
            std::fs::write(&p, text).map_err(|e| error::io(&p, e))?;
        }
    }
    Ok(summary)
}

/// Parses `a..b` (inclusive) or a single seed.
pub fn parse_seed_range(text: &str) -> Option<Vec<u64>> {
    match text.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (a.trim().parse::<u64>().ok()?, b.trim().parse::<u64>().ok()?);
            (a <= b).then(|| (a..=b).collect())
        }
        None => Some(vec![text.trim().parse().ok()?]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("1..3"), Some(vec![1, 2, 3]));
        assert_eq!(parse_seed_range("7"), Some(vec![7]));
        assert_eq!(parse_seed_range("3..1"), None);
        assert_eq!(parse_seed_range("x"), None);
    }
}
