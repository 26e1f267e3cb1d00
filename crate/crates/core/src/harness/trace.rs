//! Line-delimited JSON trace with a versioned header, and replay.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::localizer::ObjectRecord;
use crate::mission::{MissionEvent, Phase};

use super::config::RunConfig;
use super::report::MissionReport;
use super::run::run_mission;

pub const TRACE_FORMAT: &str = "tunnelnav-trace";
pub const TRACE_VERSION: u32 = 1;

/// One control cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub phase: Phase,
    pub p: [f64; 3],
    pub v: [f64; 3],
    /// Roll, pitch, yaw.
    pub att: [f64; 3],
    /// Thrust, roll, pitch, yaw rate.
    pub cmd: [f64; 4],
    /// Body-frame waypoint and APF position reference.
    pub waypoint: [f64; 3],
    pub p_ref: [f64; 3],
    pub force: [f64; 3],
    pub repulsive: [f64; 3],
    pub q_p: f64,
    pub yaw_rate_dphr: f64,
    pub clearance: f64,
    pub progress: Option<f64>,
    pub nmpc_cost: f64,
    pub nmpc_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Header { format: String, version: u32, config: Box<RunConfig> },
    Tick(TickRecord),
    Mission { record: MissionEvent },
    Object { record: ObjectRecord },
    Report { report: Box<MissionReport> },
}

impl TraceRecord {
    pub fn header(config: &RunConfig) -> Self {
        TraceRecord::Header {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            config: Box::new(config.clone()),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records serialize")
    }
}

/// Reads the header of a trace and returns its configuration.
pub fn read_header(path: &Path) -> Result<RunConfig> {
    let file = File::open(path).map_err(|e| error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|e| error::io(path, e))?;
    match serde_json::from_str::<TraceRecord>(first.trim_end()) {
        Ok(TraceRecord::Header { format, version, config }) => {
            if format != TRACE_FORMAT || version != TRACE_VERSION {
                return Err(Error::Trace(format!("unsupported trace {format} v{version}")));
            }
            Ok(*config)
        }
        Ok(_) => Err(Error::Trace("first record is not a header".into())),
        Err(e) => Err(Error::Trace(format!("unreadable header: {e}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayResult {
    pub lines_recorded: usize,
    pub lines_replayed: usize,
    /// First differing line, 1-based, if any.
    pub first_mismatch: Option<usize>,
    pub report: MissionReport,
}

impl ReplayResult {
    pub fn identical(&self) -> bool {
        self.first_mismatch.is_none() && self.lines_recorded == self.lines_replayed
    }
}

/// Re-runs the recorded configuration and compares the trace line by line.
pub fn replay(path: &Path) -> Result<ReplayResult> {
    let mut config = read_header(path)?;
    config.output = Default::default();
    let text = std::fs::read_to_string(path).map_err(|e| error::io(path, e))?;
    let recorded: Vec<&str> = text.lines().collect();
    let out = run_mission(&config)?;
    let mismatch = recorded
        .iter()
        .zip(&out.trace)
        .position(|(a, b)| *a != b.as_str())
        .or_else(|| (recorded.len() != out.trace.len()).then(|| recorded.len().min(out.trace.len())))
        .map(|i| i + 1);
    Ok(ReplayResult {
        lines_recorded: recorded.len(),
        lines_replayed: out.trace.len(),
        first_mismatch: mismatch,
        report: out.report,
    })
}
