//! Mission runner: wires the stack into the lockstep loop, scores the run and
//! writes traces, reports and plot data.

pub mod batch;
pub mod config;
pub mod output;
pub mod report;
pub mod run;
pub mod scheduler;
pub mod trace;

pub use batch::{parse_seed_range, run_batch, BatchRow, BatchSummary, PresetAggregate};
pub use config::{OutputConfig, RunConfig, SpeedProfile, WorldOverrides};
pub use output::{write_run, REPORT_FILE, TRACE_FILE};
pub use report::{score_artifacts, ArtifactScore, ArtifactSummary, MissionReport, NarrowStats, Outcome, ThinPostStats};
pub use run::{run_mission, RunOutput, Simulation};
pub use scheduler::{Scheduler, Task};
pub use trace::{read_header, replay, ReplayResult, TickRecord, TraceRecord};
