//! Mission executive: take-off, reactive exploration, timed turnaround,
//! breadcrumb return and landing, with a STOP override from any phase.

use serde::{Deserialize, Serialize};

use crate::dphr::HeadingCommand;
use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Attitude, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Preflight,
    Takeoff,
    Explore,
    Return,
    Land,
    Done,
    Stopped,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Stopped)
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Preflight => "PREFLIGHT",
            Phase::Takeoff => "TAKEOFF",
            Phase::Explore => "EXPLORE",
            Phase::Return => "RETURN",
            Phase::Land => "LAND",
            Phase::Done => "DONE",
            Phase::Stopped => "STOPPED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionParams {
    /// Exploration time budget measured from mission start, s.
    pub t_reference: f64,
    /// Flight altitude above the floor, m.
    pub altitude: f64,
    pub climb_rate: f64,
    pub hover_time: f64,
    /// Carrot distance ahead on body `x`, m.
    pub carrot: f64,
    pub crumb_spacing: f64,
    pub arrival_radius: f64,
    pub descent_rate: f64,
    /// Height above ground counted as touchdown, m.
    pub touchdown_height: f64,
    /// Heading error below which the turnaround is complete, rad.
    pub turn_tolerance: f64,
    /// Single-beam maximum range; readings at or beyond mean no return.
    pub beam_max_range: f64,
}

impl Default for MissionParams {
    fn default() -> Self {
        Self {
            t_reference: 60.0,
            altitude: 1.5,
            climb_rate: 0.5,
            hover_time: 2.0,
            carrot: 1.0,
            crumb_spacing: 2.0,
            arrival_radius: 1.5,
            descent_rate: 0.4,
            touchdown_height: 0.12,
            turn_tolerance: 0.3,
            beam_max_range: 12.0,
        }
    }
}

impl MissionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t_reference >= 0.0
            && self.altitude > self.touchdown_height
            && self.climb_rate > 0.0
            && self.hover_time >= 0.0
            && self.carrot > 0.0
            && self.crumb_spacing > 0.0
            && self.arrival_radius > 0.0
            && self.descent_rate > 0.0
            && self.turn_tolerance > 0.0
            && self.beam_max_range > self.altitude;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("invalid mission parameters".into()))
        }
    }
}

/// Tilt-compensated height from a downward beam along the airframe `-z`.
pub fn altitude_from_range(range: f64, att: &Attitude) -> f64 {
    range * att.pitch.cos() * att.roll.cos()
}

/// Keeps the last valid height through missing returns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AltitudeEstimator {
    pub height: Option<f64>,
    pub degraded: bool,
}

impl AltitudeEstimator {
    pub fn update(&mut self, range: Option<f64>, att: &Attitude, max_range: f64) -> Option<f64> {
        match range {
            Some(r) if r.is_finite() && r > 0.0 && r < max_range => {
                self.height = Some(altitude_from_range(r, att));
                self.degraded = false;
            }
            _ => self.degraded = true,
        }
        self.height
    }
}

/// Carrot ahead of the vehicle in body axes; `z` closes the height error.
pub fn explore_waypoint(height: f64, altitude: f64, carrot: f64) -> Vec3 {
    Vec3::new(carrot, 0.0, altitude - height)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breadcrumb {
    pub position: Vec3,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// Body-frame waypoint relative to the current position.
    Carrot(Vec3),
    /// World-frame point.
    World(Vec3),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum YawCommand {
    Rate(f64),
    Heading(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissionOutput {
    pub phase: Phase,
    pub target: Target,
    pub yaw: YawCommand,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissionInput<'a> {
    pub time: f64,
    pub state: &'a VehicleState,
    /// Single-beam range, `None` without a return.
    pub beam_range: Option<f64>,
    pub heading: HeadingCommand,
    pub preflight_ok: bool,
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MissionEvent {
    Phase { time: f64, from: Phase, to: Phase },
    Crumb { time: f64, index: usize, position: [f64; 3] },
    CrumbReached { time: f64, index: usize },
    TimerExpired { time: f64, clock: f64 },
    Stop { time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionState {
    pub phase: Phase,
    pub start_time: Option<f64>,
    pub clock: f64,
    pub crumbs: Vec<Breadcrumb>,
    pub altitude: AltitudeEstimator,
    arc_since_crumb: f64,
    last_position: Option<Vec3>,
    phase_start: f64,
    takeoff_origin: Vec3,
    takeoff_height0: f64,
    hold_yaw: f64,
    turn_heading: Option<f64>,
    turned: bool,
    land_xy: [f64; 2],
    land_height0: f64,
    land_then: Phase,
    pub home: Option<Vec3>,
}

impl Default for MissionState {
    fn default() -> Self {
        Self {
            phase: Phase::Preflight,
            start_time: None,
            clock: 0.0,
            crumbs: Vec::new(),
            altitude: AltitudeEstimator::default(),
            arc_since_crumb: 0.0,
            last_position: None,
            phase_start: 0.0,
            takeoff_origin: Vec3::zeros(),
            takeoff_height0: 0.0,
            hold_yaw: 0.0,
            turn_heading: None,
            turned: false,
            land_xy: [0.0; 2],
            land_height0: 0.0,
            land_then: Phase::Done,
            home: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mission {
    pub params: MissionParams,
    pub state: MissionState,
    events: Vec<MissionEvent>,
}

impl Mission {
    pub fn new(params: MissionParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            state: MissionState::default(),
            events: Vec::new(),
        })
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn drain_events(&mut self) -> Vec<MissionEvent> {
        std::mem::take(&mut self.events)
    }

    fn enter(&mut self, to: Phase, time: f64) {
        let from = self.state.phase;
        if from != to {
            self.events.push(MissionEvent::Phase { time, from, to });
            self.state.phase = to;
            self.state.phase_start = time;
        }
    }

    fn begin_landing(&mut self, state: &VehicleState, xy: [f64; 2], height: f64, then: Phase, time: f64) {
        self.state.land_xy = xy;
        self.state.land_height0 = height;
        self.state.land_then = then;
        self.state.hold_yaw = state.att.yaw;
        self.enter(Phase::Land, time);
    }

    /// World point that moves the vehicle to `xy` at the given height above ground.
    fn height_target(state: &VehicleState, xy: [f64; 2], height_now: f64, height_sp: f64) -> Vec3 {
        Vec3::new(xy[0], xy[1], state.p.z + (height_sp - height_now))
    }

    fn record_crumb(&mut self, state: &VehicleState, time: f64) {
        let index = self.state.crumbs.len();
        self.state.crumbs.push(Breadcrumb {
            position: state.p,
            yaw: state.att.yaw,
        });
        self.events.push(MissionEvent::Crumb {
            time,
            index,
            position: [state.p.x, state.p.y, state.p.z],
        });
    }

    pub fn tick(&mut self, input: &MissionInput) -> MissionOutput {
        let p = self.params;
        let s = input.state;
        let t = input.time;
        let height = self
            .state
            .altitude
            .update(input.beam_range, &s.att, p.beam_max_range)
            .unwrap_or(p.beam_max_range);
        if let Some(t0) = self.state.start_time {
            self.state.clock = t - t0;
        }

        if input.stop && !matches!(self.state.phase, Phase::Stopped | Phase::Done) {
            let already = self.state.phase == Phase::Land && self.state.land_then == Phase::Stopped;
            if !already {
                self.events.push(MissionEvent::Stop { time: t });
                if self.state.phase == Phase::Preflight {
                    self.enter(Phase::Stopped, t);
                } else {
                    self.begin_landing(s, [s.p.x, s.p.y], height, Phase::Stopped, t);
                }
            }
        }

        let hold = |yaw: f64| YawCommand::Heading(yaw);
        match self.state.phase {
            Phase::Preflight => {
                if input.preflight_ok {
                    self.state.start_time = Some(t);
                    self.state.clock = 0.0;
                    self.state.takeoff_origin = s.p;
                    self.state.takeoff_height0 = height;
                    self.state.hold_yaw = s.att.yaw;
                    self.enter(Phase::Takeoff, t);
                    return self.tick(input);
                }
                MissionOutput {
                    phase: Phase::Preflight,
                    target: Target::World(s.p),
                    yaw: hold(s.att.yaw),
                }
            }
            Phase::Takeoff => {
                let elapsed = t - self.state.phase_start;
                let ramp = self.state.takeoff_height0 + p.climb_rate * elapsed;
                let sp = ramp.min(p.altitude);
                let climb_done_at = (p.altitude - self.state.takeoff_height0).max(0.0) / p.climb_rate;
                if elapsed >= climb_done_at + p.hover_time && (height - p.altitude).abs() < 0.2 {
                    self.state.crumbs.clear();
                    self.record_crumb(s, t);
                    self.state.home = Some(s.p);
                    self.state.last_position = Some(s.p);
                    self.state.arc_since_crumb = 0.0;
                    self.enter(Phase::Explore, t);
                    return self.tick(input);
                }
                let o = self.state.takeoff_origin;
                MissionOutput {
                    phase: Phase::Takeoff,
                    target: Target::World(Self::height_target(s, [o.x, o.y], height, sp)),
                    yaw: hold(self.state.hold_yaw),
                }
            }
            Phase::Explore => {
                if let Some(last) = self.state.last_position {
                    self.state.arc_since_crumb += (s.p - last).norm();
                }
                self.state.last_position = Some(s.p);
                if self.state.arc_since_crumb >= p.crumb_spacing {
                    self.record_crumb(s, t);
                    self.state.arc_since_crumb = 0.0;
                }
                if self.state.clock > p.t_reference {
                    self.events.push(MissionEvent::TimerExpired {
                        time: t,
                        clock: self.state.clock,
                    });
                    self.state.turn_heading = Some(wrap_angle(s.att.yaw + std::f64::consts::PI));
                    self.state.turned = false;
                    self.state.takeoff_origin = s.p;
                    self.enter(Phase::Return, t);
                    return self.tick(input);
                }
                MissionOutput {
                    phase: Phase::Explore,
                    target: Target::Carrot(explore_waypoint(height, p.altitude, p.carrot)),
                    yaw: YawCommand::Rate(input.heading.yaw_rate_ref),
                }
            }
            Phase::Return => {
                let turn = self.state.turn_heading.unwrap_or(s.att.yaw);
                if !self.state.turned {
                    if wrap_angle(s.att.yaw - turn).abs() <= p.turn_tolerance {
                        self.state.turned = true;
                    } else {
                        let o = self.state.takeoff_origin;
                        return MissionOutput {
                            phase: Phase::Return,
                            target: Target::World(o),
                            yaw: YawCommand::Heading(turn),
                        };
                    }
                }
                while let Some(c) = self.state.crumbs.last() {
                    if (c.position - s.p).norm() > p.arrival_radius {
                        break;
                    }
                    let index = self.state.crumbs.len() - 1;
                    let c = self.state.crumbs.pop().unwrap();
                    self.events.push(MissionEvent::CrumbReached { time: t, index });
                    if self.state.crumbs.is_empty() {
                        self.begin_landing(s, [c.position.x, c.position.y], height, Phase::Done, t);
                        return self.tick(input);
                    }
                }
                let Some(c) = self.state.crumbs.last() else {
                    self.begin_landing(s, [s.p.x, s.p.y], height, Phase::Done, t);
                    return self.tick(input);
                };
                let d = c.position - s.p;
                let yaw = if d.xy().norm() > 0.3 { d.y.atan2(d.x) } else { s.att.yaw };
                MissionOutput {
                    phase: Phase::Return,
                    target: Target::World(c.position),
                    yaw: YawCommand::Heading(yaw),
                }
            }
            Phase::Land => {
                let elapsed = t - self.state.phase_start;
                let sp = (self.state.land_height0 - p.descent_rate * elapsed).max(0.0);
                if height <= p.touchdown_height {
                    let then = self.state.land_then;
                    self.enter(then, t);
                }
                MissionOutput {
                    phase: self.state.phase,
                    target: Target::World(Self::height_target(s, self.state.land_xy, height, sp)),
                    yaw: hold(self.state.hold_yaw),
                }
            }
            Phase::Done | Phase::Stopped => MissionOutput {
                phase: self.state.phase,
                target: Target::World(s.p),
                yaw: hold(s.att.yaw),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn input(t: f64, s: &VehicleState, range: f64) -> MissionInput<'_> {
        MissionInput {
            time: t,
            state: s,
            beam_range: Some(range),
            heading: HeadingCommand {
                yaw_rate_ref: 0.1,
                centroid_x_norm: -0.2,
                valid: true,
            },
            preflight_ok: true,
            stop: false,
        }
    }

    #[test]
    fn altitude_examples() {
        assert_eq!(altitude_from_range(2.0, &Attitude::level(0.0)), 2.0);
        assert_relative_eq!(altitude_from_range(2.0, &Attitude::new(0.0, 0.2, 0.0)), 1.960, epsilon = 1e-3);
        assert_relative_eq!(altitude_from_range(2.0, &Attitude::new(0.2, 0.2, 0.0)), 1.921, epsilon = 1e-3);
        let mut est = AltitudeEstimator::default();
        est.update(Some(1.4), &Attitude::level(0.0), 12.0);
        assert_eq!(est.update(None, &Attitude::level(0.0), 12.0), Some(1.4));
        assert!(est.degraded);
        assert_eq!(est.update(Some(12.0), &Attitude::level(0.0), 12.0), Some(1.4));
    }

    #[test]
    fn carrot_examples() {
        assert_relative_eq!(explore_waypoint(1.2, 1.5, 1.0), Vec3::new(1.0, 0.0, 0.3), epsilon = 1e-12);
        assert_eq!(explore_waypoint(1.5, 1.5, 1.0), Vec3::new(1.0, 0.0, 0.0));
    }

    /// Mission already exploring at `t = 10` with its single home crumb.
    fn exploring() -> (Mission, VehicleState) {
        let mut m = Mission::new(MissionParams::default()).unwrap();
        let mut s = VehicleState::at_rest(Vec3::new(0.0, 0.0, 0.05), 0.0);
        m.tick(&input(0.0, &s, 0.05));
        assert_eq!(m.phase(), Phase::Takeoff);
        s.p.z = 1.5;
        m.tick(&input(10.0, &s, 1.5));
        assert_eq!(m.phase(), Phase::Explore);
        (m, s)
    }

    #[test]
    fn takeoff_ramps_then_explores() {
        let mut m = Mission::new(MissionParams::default()).unwrap();
        let s = VehicleState::at_rest(Vec3::new(2.0, 3.0, 0.05), 0.3);
        let mut blocked = input(0.0, &s, 0.05);
        blocked.preflight_ok = false;
        assert_eq!(m.tick(&blocked).phase, Phase::Preflight);
        let out = m.tick(&input(1.0, &s, 0.05));
        assert_eq!(out.phase, Phase::Takeoff);
        let out = m.tick(&input(2.0, &s, 0.05));
        match out.target {
            Target::World(p) => {
                assert_relative_eq!(p.z, 0.05 + 0.5, epsilon = 1e-12);
                assert_eq!((p.x, p.y), (2.0, 3.0));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(m.state.clock, 1.0);
    }

    #[test]
    fn exploring_emits_carrot_and_dphr_rate() {
        let (mut m, mut s) = exploring();
        s.p.x = 0.5;
        let out = m.tick(&input(10.1, &s, 1.2));
        assert_eq!(out.target, Target::Carrot(Vec3::new(1.0, 0.0, 1.5 - 1.2)));
        assert_eq!(out.yaw, YawCommand::Rate(0.1));
    }

    #[test]
    fn one_crumb_per_spacing() {
        let (mut m, mut s) = exploring();
        assert_eq!(m.state.crumbs.len(), 1);
        for i in 1..=30 {
            s.p.x = 0.1 * i as f64;
            m.tick(&input(10.0 + 0.1 * i as f64, &s, 1.5));
        }
        assert_eq!(m.state.crumbs.len(), 2);
        assert_relative_eq!(m.state.crumbs[1].position.x, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn timer_expiry_turns_around() {
        let (mut m, mut s) = exploring();
        s.att.yaw = 0.4;
        let out = m.tick(&input(60.5, &s, 1.5));
        assert_eq!(out.phase, Phase::Return);
        match out.yaw {
            YawCommand::Heading(h) => assert_relative_eq!(h, wrap_angle(0.4 + std::f64::consts::PI), epsilon = 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        // never back to exploring
        for k in 0..50 {
            assert_ne!(m.tick(&input(61.0 + k as f64, &s, 1.5)).phase, Phase::Explore);
        }
    }

    #[test]
    fn last_crumb_reached_lands_at_home() {
        let (mut m, mut s) = exploring();
        s.p.x = 1.0;
        m.tick(&input(61.0, &s, 1.5));
        assert_eq!(m.phase(), Phase::Return);
        s.att.yaw = std::f64::consts::PI;
        m.tick(&input(61.0, &s, 1.5));
        assert_eq!(m.phase(), Phase::Land);
        assert!(m.state.crumbs.is_empty());
        match m.tick(&input(61.1, &s, 1.5)).target {
            Target::World(p) => assert_eq!((p.x, p.y), (0.0, 0.0)),
            other => panic!("unexpected {other:?}"),
        }
        m.tick(&input(70.0, &s, 0.1));
        assert_eq!(m.phase(), Phase::Done);
    }

    #[test]
    fn stop_lands_in_place() {
        let (mut m, mut s) = exploring();
        s.p = Vec3::new(7.0, -1.0, 1.5);
        let mut i = input(20.0, &s, 1.5);
        i.stop = true;
        let out = m.tick(&i);
        assert_eq!(out.phase, Phase::Land);
        match out.target {
            Target::World(p) => assert_eq!((p.x, p.y), (7.0, -1.0)),
            other => panic!("unexpected {other:?}"),
        }
        m.tick(&input(25.0, &s, 0.05));
        assert_eq!(m.phase(), Phase::Stopped);
        let events = m.drain_events();
        assert!(events.iter().any(|e| matches!(e, MissionEvent::Stop { .. })));
    }

    #[test]
    fn stop_before_takeoff() {
        let mut m = Mission::new(MissionParams::default()).unwrap();
        let s = VehicleState::at_rest(Vec3::zeros(), 0.0);
        let mut i = input(0.0, &s, 0.05);
        i.preflight_ok = false;
        i.stop = true;
        assert_eq!(m.tick(&i).phase, Phase::Stopped);
    }

    proptest! {
        #[test]
        fn return_visits_crumbs_in_reverse(steps in proptest::collection::vec((0.2..0.6f64, -0.3..0.3f64), 20..80)) {
            let (mut m, mut s) = exploring();
            let mut t = 10.0;
            for (dx, dy) in &steps {
                t += 0.1;
                s.p.x += dx;
                s.p.y += dy;
                m.tick(&input(t, &s, 1.5));
                prop_assert_eq!(m.phase(), Phase::Explore);
            }
            let crumbs = m.state.crumbs.clone();
            for w in crumbs.windows(2) {
                prop_assert!((w[1].position - w[0].position).norm() > 0.0);
            }
            // expire the timer and fly straight onto each crumb in turn
            t = 61.0;
            m.tick(&input(t, &s, 1.5));
            s.att.yaw = wrap_angle(s.att.yaw + std::f64::consts::PI);
            let mut visited = Vec::new();
            let mut guard = 0;
            while m.phase() == Phase::Return && guard < 1000 {
                guard += 1;
                let before = m.state.crumbs.len();
                if let Target::World(p) = m.tick(&input(t, &s, 1.5)).target {
                    s.p = p;
                }
                t += 0.1;
                let after = m.state.crumbs.len();
                prop_assert!(after <= before);
                for k in after..before {
                    visited.push(k);
                }
            }
            prop_assert_eq!(m.phase(), Phase::Land);
            let expected: Vec<usize> = (0..crumbs.len()).rev().collect();
            prop_assert_eq!(visited, expected);
            if let Target::World(p) = m.tick(&input(t, &s, 1.5)).target {
                prop_assert!((p.xy() - crumbs[0].position.xy()).norm() <= m.params.arrival_radius);
            }
        }

        #[test]
        fn carrot_is_never_degenerate(h in 0.1..5.0f64) {
            let (mut m, s) = exploring();
            if let Target::Carrot(wp) = m.tick(&input(10.1, &s, h)).target {
                prop_assert!(wp.x >= 1.0);
            }
        }
    }
}
