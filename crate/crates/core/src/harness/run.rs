//! The closed loop: plant, sensors, perception, mission and control advanced
//! on the logical clock.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::apf::{avoidance_setpoint_with, repulsive_force, ForceComposer, PointCloud, RepulsiveForce};
use crate::dphr::{write_debug_pgm, HeadingCommand, HeadingRegulator};
use crate::dynamics::{step_plant, ControlCommand, VehicleState};
use crate::error::{self, Result};
use crate::geometry::{body_to_world, world_vector_to_body, Vec3};
use crate::localizer::{LocalizedObject, ObjectLocalizer, ObjectRecord};
use crate::mission::{Mission, MissionEvent, MissionInput, MissionOutput, MissionParams, Phase, Target, YawCommand};
use crate::nmpc::{adapt_position_weights, Nmpc, NmpcState, NmpcWeights};
use crate::sim::{preset, synth_detections, DepthCamera, Lidar, Preset, SingleBeam, TunnelWorld};

use super::config::{RunConfig, SpeedProfile};
use super::report::{score_artifacts, MissionReport, NarrowStats, Outcome, ThinPostStats};
use super::scheduler::{seconds, Scheduler, Task};
use super::trace::{TickRecord, TraceRecord};

/// Landing-gear height: the vehicle center rests this far above the ground, m.
pub const SKID_HEIGHT: f64 = 0.08;
/// Exploration time excluded from the post-transient and narrow-section statistics, s.
pub const TRANSIENT: f64 = 5.0;
/// Range within which a thin post counts as in view of the LiDAR, m.
pub const THIN_POST_RANGE: f64 = 5.0;
/// A LiDAR return closer than this to a post's surface lies on it, m.
const ON_SURFACE: f64 = 0.05;
const PLANT_DT: f64 = 0.01;

/// Independent noise streams, so enabling one sensor never shifts another.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Lidar = 1,
    Depth = 2,
    Detect = 3,
    Beam = 4,
    Windows = 5,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s as u64);
    r
}

/// Everything a run produces. `wall_time` is kept out of the report so
/// replays compare equal.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MissionReport,
    pub trace: Vec<String>,
    pub ticks: Vec<TickRecord>,
    pub events: Vec<MissionEvent>,
    pub object_events: Vec<ObjectRecord>,
    pub objects: Vec<LocalizedObject>,
    pub world: TunnelWorld,
    pub start: Vec3,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Default)]
struct Metrics {
    distance: f64,
    flight_time: f64,
    max_speed: f64,
    explore_start: Option<f64>,
    explore_end: Option<f64>,
    explore_distance: f64,
    min_clearance: f64,
    min_clearance_flight: f64,
    max_progress: f64,
    post_transient_min: Option<f64>,
    narrow: [(f64, f64, usize); 2],
    thin: ThinPostStats,
    max_rate_violation: f64,
    max_applied_violation: f64,
    degraded: usize,
    scans: usize,
    frames: usize,
    controls: usize,
}

pub struct Simulation {
    cfg: RunConfig,
    preset: Preset,
    world: TunnelWorld,
    lidar: Lidar,
    camera: DepthCamera,
    beam: SingleBeam,
    nmpc: Nmpc,
    weights: NmpcWeights,
    composer: ForceComposer,
    dphr: HeadingRegulator,
    localizer: ObjectLocalizer,
    mission: Mission,
    rng_lidar: ChaCha8Rng,
    rng_depth: ChaCha8Rng,
    rng_detect: ChaCha8Rng,
    rng_beam: ChaCha8Rng,
    rng_windows: ChaCha8Rng,
    state: VehicleState,
    start: Vec3,
    command: ControlCommand,
    heading: HeadingCommand,
    beam_range: Option<f64>,
    repulsion: RepulsiveForce,
    output: MissionOutput,
    have_scan: bool,
    have_frame: bool,
    time: f64,
    metrics: Metrics,
    crash: Option<String>,
    trace: Vec<String>,
    ticks: Vec<TickRecord>,
    events: Vec<MissionEvent>,
    object_events: Vec<ObjectRecord>,
    dump_dir: Option<PathBuf>,
}

impl Simulation {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let preset = preset(&cfg.preset)?;
        let mut world = preset.world.clone();
        if cfg.overrides.remove_artifacts {
            world.artifacts.clear();
        }
        world.artifacts.extend(cfg.overrides.extra_artifacts.iter().copied());
        world.obstacles.extend(cfg.overrides.extra_obstacles.iter().copied());
        let world = TunnelWorld::assemble(
            &world.name,
            world.segments,
            world.rooms,
            world.obstacles,
            world.artifacts,
            world.length,
            world.min_width,
        );

        let mission_params = MissionParams {
            t_reference: cfg.t_reference.unwrap_or(match cfg.profile {
                SpeedProfile::Nominal => preset.t_reference,
                SpeedProfile::Fast => preset.t_reference_fast,
            }),
            altitude: cfg.altitude.unwrap_or(preset.altitude),
            ..cfg.mission
        };
        let yaw = preset.start_yaw + cfg.start_yaw_offset;
        let (s, c) = preset.start_yaw.sin_cos();
        let start = preset.start + Vec3::new(-s, c, 0.0) * cfg.start_lateral_offset;
        let state = VehicleState::at_rest(start + Vec3::new(0.0, 0.0, SKID_HEIGHT), yaw);
        let hover = ControlCommand::hover(cfg.plant.gravity);

        let mut header = cfg.clone();
        header.output = Default::default();
        let dump_dir = cfg.output.dir.clone();
        if let Some(dir) = &dump_dir {
            for (every, sub) in [(cfg.output.dump_scan_every, "scans"), (cfg.output.dump_depth_every, "depth")] {
                if every.is_some() {
                    let p = dir.join(sub);
                    std::fs::create_dir_all(&p).map_err(|e| error::io(&p, e))?;
                }
            }
        }

        Ok(Self {
            lidar: Lidar::new(cfg.sensors.lidar),
            camera: DepthCamera::new(cfg.sensors.depth),
            beam: SingleBeam::new(cfg.sensors.beam),
            nmpc: Nmpc::new(&cfg.plant, cfg.solver),
            weights: cfg.effective_weights(),
            composer: ForceComposer::new(),
            dphr: HeadingRegulator::new(cfg.dphr),
            localizer: ObjectLocalizer::new(cfg.localizer.clone())?,
            mission: Mission::new(mission_params)?,
            rng_lidar: stream(cfg.seed, Stream::Lidar),
            rng_depth: stream(cfg.seed, Stream::Depth),
            rng_detect: stream(cfg.seed, Stream::Detect),
            rng_beam: stream(cfg.seed, Stream::Beam),
            rng_windows: stream(cfg.seed, Stream::Windows),
            output: MissionOutput {
                phase: Phase::Preflight,
                target: Target::World(state.p),
                yaw: YawCommand::Heading(yaw),
            },
            state,
            start,
            command: hover,
            heading: HeadingCommand::default(),
            beam_range: None,
            repulsion: RepulsiveForce::default(),
            have_scan: false,
            have_frame: false,
            time: 0.0,
            metrics: Metrics {
                min_clearance: f64::INFINITY,
                min_clearance_flight: f64::INFINITY,
                ..Metrics::default()
            },
            crash: None,
            trace: vec![TraceRecord::header(&header).to_line()],
            ticks: Vec::new(),
            events: Vec::new(),
            object_events: Vec::new(),
            dump_dir,
            world,
            preset,
            cfg: cfg.clone(),
        })
    }

    pub fn world(&self) -> &TunnelWorld {
        &self.world
    }

    pub fn mission_params(&self) -> &MissionParams {
        &self.mission.params
    }

    fn time_limit(&self) -> f64 {
        self.cfg.time_limit.unwrap_or(2.5 * self.mission.params.t_reference + 40.0)
    }

    fn flying(&self) -> bool {
        matches!(self.output.phase, Phase::Takeoff | Phase::Explore | Phase::Return | Phase::Land)
    }

    /// Runs to DONE, STOPPED, a crash or the time limit.
    pub fn run(mut self) -> Result<RunOutput> {
        let wall = Instant::now();
        let limit = self.time_limit();
        let mut sched = Scheduler::new();
        let mut timed_out = false;
        loop {
            let (ticks, task, k) = sched.pop();
            self.time = seconds(ticks);
            if self.time > limit {
                timed_out = true;
                break;
            }
            match task {
                Task::Plant => self.plant()?,
                Task::Lidar => self.lidar_scan(k)?,
                Task::Depth => self.depth_frame(k)?,
                Task::Mission => self.mission_tick(),
                Task::Control => self.control(),
            }
            if self.crash.is_some() || self.output.phase.is_terminal() {
                break;
            }
        }
        let events = self.localizer.tick(self.time, true);
        self.record_objects(&events);
        let report = self.report(timed_out);
        self.trace.push(TraceRecord::Report { report: Box::new(report.clone()) }.to_line());
        Ok(RunOutput {
            report,
            trace: self.trace,
            ticks: self.ticks,
            events: self.events,
            object_events: self.object_events,
            objects: self.localizer.objects().to_vec(),
            world: self.world,
            start: self.start,
            wall_time: wall.elapsed(),
        })
    }

    fn plant(&mut self) -> Result<()> {
        if self.flying() {
            let prev = self.state;
            let mut next = step_plant(&self.state, &self.command, PLANT_DT, &self.cfg.plant).map_err(|e| {
                log::error!("t={:.2}: {e}", self.time);
                e
            })?;
            self.ground_contact(&mut next);
            self.state = next;
            let m = &mut self.metrics;
            let step = (next.p - prev.p).xy().norm();
            m.distance += step;
            m.flight_time += PLANT_DT;
            m.max_speed = m.max_speed.max(next.v.xy().norm());
            if self.output.phase == Phase::Explore {
                m.explore_distance += step;
            }
            let clearance = self.world.clearance(&next.p);
            m.min_clearance_flight = m.min_clearance_flight.min(clearance);
            if matches!(self.output.phase, Phase::Explore | Phase::Return) {
                m.min_clearance = m.min_clearance.min(clearance);
            }
            if clearance <= 0.0 {
                let p = next.p;
                let msg = format!("clearance {clearance:.3} m at t={:.2} s, p=({:.2}, {:.2}, {:.2})", self.time, p.x, p.y, p.z);
                log::warn!("crash: {msg}");
                self.crash = Some(msg);
            }
        }
        self.beam_range = self.beam.range(&self.world, &self.state, &mut self.rng_beam);
        Ok(())
    }

    /// Skids rest on the ground: no sinking, no sliding.
    fn ground_contact(&self, s: &mut VehicleState) {
        const PROBE: f64 = 0.3;
        let probe = s.p + Vec3::new(0.0, 0.0, PROBE);
        if let Some(t) = self.world.raycast(&probe, &Vec3::new(0.0, 0.0, -1.0), PROBE + SKID_HEIGHT) {
            let h = t - PROBE;
            if h < SKID_HEIGHT {
                s.p.z += SKID_HEIGHT - h;
                s.v = Vec3::new(0.0, 0.0, s.v.z.max(0.0));
            }
        }
    }

    fn lidar_scan(&mut self, k: u64) -> Result<()> {
        let scan = self.lidar.scan(&self.world, &self.state, &mut self.rng_lidar);
        let apf = &self.cfg.apf;
        let cloud = PointCloud::ingest(scan.points.iter().copied(), apf.self_radius).thinned(apf.r_f, apf.voxel, apf.max_points);
        self.repulsion = repulsive_force(&cloud, apf);
        self.have_scan = true;
        self.metrics.scans += 1;
        if self.flying() {
            self.thin_post_check(&scan.points);
        }
        if let (Some(dir), Some(every)) = (&self.dump_dir, self.cfg.output.dump_scan_every) {
            if k as usize % every == 0 {
                let path = dir.join("scans").join(format!("scan_{k:06}.xyz"));
                let text: String = scan.points.iter().map(|p| format!("{:.4} {:.4} {:.4}\n", p.x, p.y, p.z)).collect();
                std::fs::write(&path, text).map_err(|e| error::io(&path, e))?;
            }
        }
        Ok(())
    }

    fn thin_post_check(&mut self, points: &[Vec3]) {
        let posts: Vec<_> = self
            .world
            .obstacles
            .iter()
            .filter(|o| o.is_thin_post() && o.sdf(&self.state.p) <= THIN_POST_RANGE)
            .collect();
        if posts.is_empty() {
            return;
        }
        let world_pts: Vec<Vec3> = points.iter().map(|p| body_to_world(p, &self.state)).collect();
        let t = &mut self.metrics.thin;
        t.scans_in_range += 1;
        let mut all = true;
        for post in posts {
            t.sightings += 1;
            if world_pts.iter().any(|q| post.sdf(q).abs() < ON_SURFACE) {
                t.hits += 1;
            } else {
                all = false;
            }
        }
        if all {
            t.scans_all_hit += 1;
        }
    }

    fn depth_frame(&mut self, k: u64) -> Result<()> {
        let img = self.camera.render_coarse(&self.world, &self.state, &mut self.rng_depth);
        let (cmd, region) = self.dphr.update(&img);
        self.heading = cmd;
        self.have_frame = true;
        self.metrics.frames += 1;
        if let (Some(dir), Some(every)) = (&self.dump_dir, self.cfg.output.dump_depth_every) {
            if k as usize % every == 0 {
                write_debug_pgm(&dir.join("depth").join(format!("frame_{k:06}.pgm")), &img, region.as_ref())?;
            }
        }
        if !self.flying() {
            return Ok(());
        }
        let dets = synth_detections(
            &self.world,
            &self.state,
            &self.camera,
            &self.cfg.detection,
            &self.cfg.localizer.priors,
            self.time,
            &mut self.rng_detect,
        );
        if dets.is_empty() {
            return Ok(());
        }
        let centers: Vec<(f64, f64)> = dets.iter().map(|d| d.bbox.center()).collect();
        let windows = self.camera.render_windows(&self.world, &self.state, &centers, &mut self.rng_windows);
        for d in &dets {
            self.localizer.ingest(d, &windows, &self.state, &self.camera.mount)?;
        }
        Ok(())
    }

    fn mission_tick(&mut self) {
        let stop = self.cfg.stop_at.is_some_and(|s| self.time >= s);
        let input = MissionInput {
            time: self.time,
            state: &self.state,
            beam_range: self.beam_range,
            heading: self.heading,
            preflight_ok: self.have_scan && self.have_frame && self.beam_range.is_some(),
            stop,
        };
        let before = self.output.phase;
        self.output = self.mission.tick(&input);
        let m = &mut self.metrics;
        if before != Phase::Explore && self.output.phase == Phase::Explore {
            m.explore_start = Some(self.time);
        }
        if before == Phase::Explore && self.output.phase != Phase::Explore {
            m.explore_end = Some(self.time);
        }
        if !self.flying() {
            self.nmpc.reset();
            self.command = ControlCommand::hover(self.cfg.plant.gravity);
        }
        for e in self.mission.drain_events() {
            log::debug!("{e:?}");
            self.trace.push(TraceRecord::Mission { record: e.clone() }.to_line());
            self.events.push(e);
        }
        let events = self.localizer.tick(self.time, false);
        self.record_objects(&events);
    }

    fn record_objects(&mut self, events: &[crate::localizer::ObjectEvent]) {
        for e in events {
            let r = ObjectRecord::from(e);
            log::info!("object {:?} {} at ({:.2}, {:.2}, {:.2})", r.event, r.class_name, r.position[0], r.position[1], r.position[2]);
            self.trace.push(TraceRecord::Object { record: r.clone() }.to_line());
            self.object_events.push(r);
        }
    }

    fn control(&mut self) {
        if !self.flying() {
            return;
        }
        let phase = self.output.phase;
        let s = self.state;
        let wp = match self.output.target {
            Target::Carrot(b) => b,
            Target::World(w) => world_vector_to_body(&(w - s.p), s.att.yaw),
        };
        // avoidance acts in flight; take-off and landing track the vertical profile directly
        let (p_ref, force, repulsive, q_p) = if matches!(phase, Phase::Explore | Phase::Return) {
            let sp = avoidance_setpoint_with(&wp, &Vec3::zeros(), self.repulsion, &self.cfg.apf, &mut self.composer);
            let q_p = adapt_position_weights(&self.weights, sp.repulsion.raw_magnitude);
            (sp.p_ref, sp.force.total, sp.force.repulsive, q_p)
        } else {
            self.composer = ForceComposer::new();
            (wp, wp, Vec3::zeros(), self.weights.q_p_max)
        };
        let weights = self.weights.with_position_weight(q_p);
        let sol = self.nmpc.solve(
            &NmpcState::from_vehicle(&s, &s.p),
            &NmpcState::hover_at(p_ref),
            &self.command,
            &weights,
            &self.cfg.bounds,
        );
        let yaw_rate = match self.output.yaw {
            YawCommand::Rate(r) => r,
            YawCommand::Heading(psi) => self.cfg.yaw.rate(&s, psi),
        };
        let cmd = ControlCommand { yaw_rate_ref: yaw_rate, ..sol.command };
        let b = &self.cfg.bounds;
        let m = &mut self.metrics;
        m.controls += 1;
        m.max_rate_violation = m.max_rate_violation.max(sol.max_rate_violation);
        let applied = ((cmd.roll_ref - self.command.roll_ref).abs() - b.d_roll_max)
            .max((cmd.pitch_ref - self.command.pitch_ref).abs() - b.d_pitch_max)
            .max(0.0);
        m.max_applied_violation = m.max_applied_violation.max(applied);
        if sol.degraded {
            m.degraded += 1;
        }
        self.command = cmd;

        let progress = self.world.progress(&s.p);
        let clearance = self.world.clearance(&s.p);
        let speed = s.v.xy().norm();
        if let Some(pr) = progress {
            if matches!(phase, Phase::Explore) {
                m.max_progress = m.max_progress.max(pr);
            }
        }
        if let (Phase::Explore, Some(t0)) = (phase, m.explore_start) {
            let settled = self.time >= t0 + TRANSIENT;
            let before_end = match (self.preset.end_region, progress) {
                (Some(end), Some(pr)) => pr < end,
                _ => true,
            };
            if settled && before_end {
                m.post_transient_min = Some(m.post_transient_min.map_or(speed, |v| v.min(speed)));
                if let Some([a, b]) = self.preset.narrow_span {
                    let inside = progress.is_some_and(|pr| pr >= a && pr <= b);
                    let slot = &mut m.narrow[usize::from(!inside)];
                    slot.0 += speed;
                    slot.1 += q_p;
                    slot.2 += 1;
                }
            }
        }

        let rec = TickRecord {
            t: self.time,
            phase,
            p: arr(&s.p),
            v: arr(&s.v),
            att: [s.att.roll, s.att.pitch, s.att.yaw],
            cmd: [cmd.thrust, cmd.roll_ref, cmd.pitch_ref, cmd.yaw_rate_ref],
            waypoint: arr(&wp),
            p_ref: arr(&p_ref),
            force: arr(&force),
            repulsive: arr(&repulsive),
            q_p,
            yaw_rate_dphr: self.heading.yaw_rate_ref,
            clearance,
            progress,
            nmpc_cost: sol.cost,
            nmpc_iterations: sol.iterations,
        };
        self.trace.push(TraceRecord::Tick(rec.clone()).to_line());
        self.ticks.push(rec);
    }

    fn report(&self, timed_out: bool) -> MissionReport {
        let m = &self.metrics;
        let phase = self.mission.phase();
        let return_error = (self.state.p - self.start).xy().norm();
        let mut diagnostic = self.crash.clone();
        let outcome = if self.crash.is_some() {
            Outcome::Crash
        } else if timed_out {
            diagnostic = Some(format!("time limit {:.1} s reached in {}", self.time_limit(), phase.name()));
            Outcome::Timeout
        } else if phase == Phase::Done && m.min_clearance_flight > 0.0 && return_error <= self.mission.params.arrival_radius {
            Outcome::Success
        } else {
            if phase == Phase::Done {
                diagnostic = Some(format!("landed {return_error:.2} m from the start"));
            }
            Outcome::Stopped
        };
        let explore_duration = match (m.explore_start, m.explore_end) {
            (Some(a), Some(b)) => b - a,
            (Some(a), None) => self.time - a,
            _ => 0.0,
        };
        let artifacts = score_artifacts(&self.world.artifacts, self.localizer.objects());
        let mean = |x: f64, n: usize| if n > 0 { x / n as f64 } else { 0.0 };
        let narrow = self.preset.narrow_span.map(|_| {
            let [(s_in, q_in, n_in), (s_out, q_out, n_out)] = m.narrow;
            NarrowStats {
                mean_speed_narrow: mean(s_in, n_in),
                mean_speed_elsewhere: mean(s_out, n_out),
                mean_q_p_narrow: mean(q_in, n_in),
                mean_q_p_elsewhere: mean(q_out, n_out),
                samples_narrow: n_in,
            }
        });
        MissionReport {
            preset: self.cfg.preset.clone(),
            seed: self.cfg.seed,
            profile: self.cfg.profile,
            outcome,
            final_phase: phase,
            sim_time: self.time,
            distance: m.distance,
            mean_speed: if m.flight_time > 0.0 { m.distance / m.flight_time } else { 0.0 },
            max_speed: m.max_speed,
            explore_duration,
            explore_distance: m.explore_distance,
            explore_mean_speed: if explore_duration > 0.0 { m.explore_distance / explore_duration } else { 0.0 },
            post_transient_min_speed: m.post_transient_min,
            min_clearance: m.min_clearance.is_finite().then_some(m.min_clearance),
            min_clearance_flight: m.min_clearance_flight.is_finite().then_some(m.min_clearance_flight),
            max_progress: m.max_progress,
            reached_end: self.preset.end_region.map(|e| m.max_progress >= e),
            return_error,
            artifacts,
            thin_posts: m.thin,
            narrow,
            max_rate_violation: m.max_rate_violation,
            max_applied_rate_violation: m.max_applied_violation,
            degraded_solves: m.degraded,
            lidar_scans: m.scans,
            depth_frames: m.frames,
            control_ticks: m.controls,
            rejected_detections: self.localizer.rejected.values().sum(),
            trace: None,
            diagnostic,
        }
    }
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Builds and runs one mission.
pub fn run_mission(cfg: &RunConfig) -> Result<RunOutput> {
    Simulation::new(cfg)?.run()
}
