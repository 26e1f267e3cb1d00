//! Command-line mission runner. Exit codes: 0 every mission succeeded,
//! 1 a mission failed or a replay diverged, 2 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use tunnelnav::harness::{parse_seed_range, replay, run_batch, run_mission, write_run, Outcome, RunConfig};
use tunnelnav::sim::{preset, preset_names};
use tunnelnav::Error;

/// Logging filter, e.g. `info` or `tunnelnav=debug`.
const LOG_ENV: &str = "TUNNELNAV_LOG";

#[derive(Parser, Debug)]
#[command(name = "tunnelnav", version, about = "Reactive tunnel-exploration missions in simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct MissionArgs {
    /// TOML run configuration; defaults are used when omitted. A batch
    /// accepts several.
    #[arg(long)]
    config: Vec<PathBuf>,
    /// World preset, overriding the configuration.
    #[arg(long)]
    preset: Option<String>,
    /// Use the fast speed profile.
    #[arg(long)]
    fast: bool,
    /// Exploration budget in seconds, overriding the configuration.
    #[arg(long)]
    t_reference: Option<f64>,
    /// Command STOP at this simulated time, s.
    #[arg(long)]
    stop_at: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one mission.
    Run {
        #[command(flatten)]
        mission: MissionArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the report, trace and plot data.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run missions over presets and seeds and print the summary table.
    Batch {
        #[command(flatten)]
        mission: MissionArgs,
        /// Preset list, comma separated; the configured preset when omitted.
        #[arg(long, value_delimiter = ',', conflicts_with = "preset")]
        presets: Vec<String>,
        /// Seed or inclusive seed range `a..b`.
        #[arg(long, default_value = "1")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// World presets.
    Presets {
        #[command(subcommand)]
        action: PresetsAction,
    },
    /// Re-run a recorded trace and compare it line by line.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum PresetsAction {
    List,
}

/// Failure split by exit code.
enum Failure {
    Config(anyhow::Error),
    Mission(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteState(_) | Error::Trace(_) | Error::Json(_) | Error::Io { .. } => Failure::Mission(e.into()),
            _ => Failure::Config(e.into()),
        }
    }
}

fn load(args: &MissionArgs, path: Option<&Path>) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(path) => RunConfig::from_file(path).map_err(|e| match e {
            Error::Io { .. } => Failure::Config(anyhow::Error::new(e).context("reading config")),
            e => Failure::from(e),
        })?,
        None => RunConfig::default(),
    };
    if let Some(p) = &args.preset {
        cfg.preset = p.clone();
    }
    if args.fast {
        cfg = cfg.fast();
    }
    if args.t_reference.is_some() {
        cfg.t_reference = args.t_reference;
    }
    if args.stop_at.is_some() {
        cfg.stop_at = args.stop_at;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: &MissionArgs, seed: Option<u64>, out: Option<&Path>) -> Result<bool, Failure> {
    if args.config.len() > 1 {
        return Err(Failure::Config(anyhow::anyhow!("run takes a single --config")));
    }
    let mut cfg = load(args, args.config.first().map(PathBuf::as_path))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.output.dir = out.map(Path::to_path_buf);
    let output = run_mission(&cfg)?;
    let report = match out {
        Some(dir) => write_run(dir, &output)?,
        None => output.report,
    };
    println!(
        "{} seed {}: {} in {:.1} s, {:.1} m at {:.2} m/s exploring, min clearance {}, return error {:.2} m, artifacts {}/{} ({} false)",
        report.preset,
        report.seed,
        report.outcome.name(),
        report.sim_time,
        report.distance,
        report.explore_mean_speed,
        report.min_clearance.map_or("n/a".into(), |c| format!("{c:.2} m")),
        report.return_error,
        report.artifacts.localized,
        report.artifacts.ground_truth,
        report.artifacts.false_positives,
    );
    if let Some(d) = &report.diagnostic {
        println!("  {d}");
    }
    Ok(report.outcome == Outcome::Success)
}

fn batch(args: &MissionArgs, presets: &[String], seeds: &str, out: Option<&Path>) -> Result<bool, Failure> {
    let seeds = parse_seed_range(seeds)
        .ok_or_else(|| Failure::Config(anyhow::anyhow!("invalid seed range `{seeds}`, expected a..b or n")))?;
    let bases = if args.config.is_empty() {
        vec![load(args, None)?]
    } else {
        args.config.iter().map(|p| load(args, Some(p))).collect::<Result<_, _>>()?
    };
    let mut configs = vec![];
    for base in &bases {
        let names = if presets.is_empty() { vec![base.preset.clone()] } else { presets.to_vec() };
        for name in &names {
            for &seed in &seeds {
                let cfg = RunConfig { preset: name.clone(), seed, ..base.clone() };
                cfg.validate()?;
                configs.push(cfg);
            }
        }
    }
    let summary = run_batch(&configs, out)?;
    print!("{}", summary.table());
    println!("{}/{} missions succeeded", summary.successes(), summary.rows.len());
    Ok(summary.all_succeeded())
}

fn list_presets() -> Result<bool, Failure> {
    println!("{:<20} {:>8} {:>8} {:>7}  description", "name", "length_m", "t_ref_s", "fast_s");
    for name in preset_names() {
        let p = preset(name)?;
        println!(
            "{:<20} {:>8.1} {:>8.0} {:>7.0}  {}",
            name, p.world.length, p.t_reference, p.t_reference_fast, p.description
        );
    }
    Ok(true)
}

fn replay_trace(path: &Path) -> Result<bool, Failure> {
    let r = replay(path).with_context(|| format!("replaying {}", path.display())).map_err(Failure::Mission)?;
    match r.first_mismatch {
        None if r.identical() => {
            println!("{}: {} lines replayed identically", path.display(), r.lines_replayed);
            Ok(true)
        }
        Some(line) => {
            println!("{}: first difference at line {line}", path.display());
            Ok(false)
        }
        None => {
            println!("{}: {} lines recorded, {} replayed", path.display(), r.lines_recorded, r.lines_replayed);
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { mission, seed, out } => run(mission, *seed, out.as_deref()),
        Command::Batch { mission, presets, seeds, out } => batch(mission, presets, seeds, out.as_deref()),
        Command::Presets { action: PresetsAction::List } => list_presets(),
        Command::Replay { trace } => replay_trace(trace),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Mission(e)) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn arguments_are_consistent() {
        Cli::command().debug_assert();
    }
}
