//! Run artifacts on disk: report, trace, event logs and plot-ready
//! delimited text.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{self, Result};
use crate::sim::Solid;

use super::report::MissionReport;
use super::run::RunOutput;

pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.ndjson";

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| error::io(path, e))
}

/// Writes every per-run file into `dir` and returns the report as written.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<MissionReport> {
    std::fs::create_dir_all(dir).map_err(|e| error::io(dir, e))?;
    let mut trace = out.trace.join("\n");
    trace.push('\n');
    write(&dir.join(TRACE_FILE), &trace)?;

    let mut report = out.report.clone();
    report.trace = Some(TRACE_FILE.into());
    write(&dir.join(REPORT_FILE), &serde_json::to_string_pretty(&report)?)?;

    let mut events = String::new();
    for e in &out.events {
        writeln!(events, "{}", serde_json::to_string(e)?).ok();
    }
    write(&dir.join("events.ndjson"), &events)?;

    let mut objects = String::new();
    for o in &out.object_events {
        writeln!(objects, "{}", serde_json::to_string(o)?).ok();
    }
    write(&dir.join("objects.ndjson"), &objects)?;

    let mut velocity = String::from("t,speed,vx,vy,vz,phase\n");
    let mut path = String::from("t,x,y,z,yaw,phase\n");
    for k in &out.ticks {
        let speed = k.v[0].hypot(k.v[1]);
        writeln!(velocity, "{:.2},{:.4},{:.4},{:.4},{:.4},{}", k.t, speed, k.v[0], k.v[1], k.v[2], k.phase.name()).ok();
        writeln!(path, "{:.2},{:.4},{:.4},{:.4},{:.4},{}", k.t, k.p[0], k.p[1], k.p[2], k.att[2], k.phase.name()).ok();
    }
    write(&dir.join("velocity.csv"), &velocity)?;
    write(&dir.join("path.csv"), &path)?;

    let mut outline = String::from("polyline,x,y\n");
    for (i, line) in out.world.outline(0.5).iter().enumerate() {
        for p in line {
            writeln!(outline, "{i},{:.3},{:.3}", p[0], p[1]).ok();
        }
    }
    let n = out.world.outline(0.5).len();
    for (i, o) in out.world.obstacles.iter().enumerate() {
        for p in obstacle_outline(o) {
            writeln!(outline, "{},{:.3},{:.3}", n + i, p[0], p[1]).ok();
        }
    }
    write(&dir.join("outline.csv"), &outline)?;

    let mut artifacts = String::from("kind,class_id,x,y,z,error\n");
    for a in &report.artifacts.per_artifact {
        let err = a.error.map(|e| format!("{e:.3}")).unwrap_or_default();
        writeln!(artifacts, "truth,{},{:.3},{:.3},{:.3},{err}", a.class_id, a.truth[0], a.truth[1], a.truth[2]).ok();
    }
    for o in &out.objects {
        writeln!(artifacts, "reported,{},{:.3},{:.3},{:.3},", o.class_id, o.position.x, o.position.y, o.position.z).ok();
    }
    write(&dir.join("artifacts.csv"), &artifacts)?;
    Ok(report)
}

/// Closed footprint polygon for plotting.
fn obstacle_outline(o: &Solid) -> Vec<[f64; 2]> {
    match *o {
        Solid::Cylinder { center, radius, .. } => (0..=16)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / 16.0;
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            })
            .collect(),
        Solid::Box { center, half, yaw } => {
            let (s, c) = yaw.sin_cos();
            [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0)]
                .iter()
                .map(|(a, b)| [center.x + a * half.x * c - b * half.y * s, center.y + a * half.x * s + b * half.y * c])
                .collect()
        }
        Solid::Capsule { a, b, .. } => vec![[a.x, a.y], [b.x, b.y]],
    }
}
