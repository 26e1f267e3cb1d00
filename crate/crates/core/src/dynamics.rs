//! Simulated MAV plant and the decoupled yaw channel.
//!
//! Translational dynamics are a point mass driven by mass-normalized thrust
//! along the airframe `z` axis, linear drag, and a first-order inner attitude
//! loop tracking roll/pitch references. Yaw rate follows its reference
//! through a first-order lag. Integration is classic RK4.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Attitude, Vec3};

/// Full vehicle state in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub p: Vec3,
    pub v: Vec3,
    pub att: Attitude,
    /// Body angular rates. `x`/`y` hold the current roll/pitch rates, `z` the yaw rate.
    pub omega: Vec3,
}

impl VehicleState {
    pub fn at_rest(p: Vec3, yaw: f64) -> Self {
        Self {
            p,
            v: Vec3::zeros(),
            att: Attitude::level(yaw),
            omega: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
            && self.att.roll.is_finite()
            && self.att.pitch.is_finite()
            && self.att.yaw.is_finite()
    }

    /// `[px, py, pz, vx, vy, vz, roll, pitch, yaw, wx, wy, wz]`.
    pub fn to_array(&self) -> [f64; 12] {
        [
            self.p.x,
            self.p.y,
            self.p.z,
            self.v.x,
            self.v.y,
            self.v.z,
            self.att.roll,
            self.att.pitch,
            self.att.yaw,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        ]
    }
}

/// Command accepted by the inner attitude loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    /// Mass-normalized thrust, m/s^2, non-negative.
    pub thrust: f64,
    pub roll_ref: f64,
    pub pitch_ref: f64,
    pub yaw_rate_ref: f64,
}

impl ControlCommand {
    pub fn hover(gravity: f64) -> Self {
        Self {
            thrust: gravity,
            roll_ref: 0.0,
            pitch_ref: 0.0,
            yaw_rate_ref: 0.0,
        }
    }

    /// Throttle signal in `[0, 1]`; linear with 0.5 at hover.
    pub fn throttle(&self, gravity: f64) -> f64 {
        (self.thrust / (2.0 * gravity)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    pub gravity: f64,
    /// Roll/pitch time constant, s.
    pub tau_attitude: f64,
    /// Roll/pitch static gain.
    pub gain_attitude: f64,
    /// Linear drag per axis, 1/s.
    pub drag: Vec3,
    /// Yaw-rate lag time constant, s.
    pub tau_yaw_rate: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            tau_attitude: 0.15,
            gain_attitude: 1.0,
            drag: Vec3::new(0.1, 0.1, 0.2),
            tau_yaw_rate: 0.15,
        }
    }
}

// Integrated state: p(3) v(3) roll pitch yaw yaw_rate
type PlantVec = [f64; 10];

fn derivative(x: &PlantVec, cmd: &ControlCommand, prm: &PlantParams) -> PlantVec {
    let (sr, cr) = x[6].sin_cos();
    let (sp, cp) = x[7].sin_cos();
    let (sy, cy) = x[8].sin_cos();
    let t = cmd.thrust;
    let ax = t * (cy * sp * cr + sy * sr) - prm.drag.x * x[3];
    let ay = t * (sy * sp * cr - cy * sr) - prm.drag.y * x[4];
    let az = t * cp * cr - prm.gravity - prm.drag.z * x[5];
    [
        x[3],
        x[4],
        x[5],
        ax,
        ay,
        az,
        (prm.gain_attitude * cmd.roll_ref - x[6]) / prm.tau_attitude,
        (prm.gain_attitude * cmd.pitch_ref - x[7]) / prm.tau_attitude,
        x[9],
        (cmd.yaw_rate_ref - x[9]) / prm.tau_yaw_rate,
    ]
}

fn axpy(x: &PlantVec, h: f64, k: &PlantVec) -> PlantVec {
    let mut out = *x;
    for i in 0..10 {
        out[i] += h * k[i];
    }
    out
}

/// Advances the plant by `dt` seconds with the command held constant.
pub fn step_plant(
    state: &VehicleState,
    cmd: &ControlCommand,
    dt: f64,
    params: &PlantParams,
) -> Result<VehicleState> {
    if !state.is_finite() {
        return Err(Error::NonFiniteState(format!("{state:?}")));
    }
    if !(dt > 0.0 && dt <= 0.02) {
        return Err(Error::InvalidParameter(format!("plant step dt={dt} outside (0, 0.02]")));
    }
    let x: PlantVec = [
        state.p.x,
        state.p.y,
        state.p.z,
        state.v.x,
        state.v.y,
        state.v.z,
        state.att.roll,
        state.att.pitch,
        state.att.yaw,
        state.omega.z,
    ];
    let k1 = derivative(&x, cmd, params);
    let k2 = derivative(&axpy(&x, 0.5 * dt, &k1), cmd, params);
    let k3 = derivative(&axpy(&x, 0.5 * dt, &k2), cmd, params);
    let k4 = derivative(&axpy(&x, dt, &k3), cmd, params);
    let mut n = x;
    for i in 0..10 {
        n[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    let rates = derivative(&n, cmd, params);
    let next = VehicleState {
        p: Vec3::new(n[0], n[1], n[2]),
        v: Vec3::new(n[3], n[4], n[5]),
        att: Attitude {
            roll: n[6],
            pitch: n[7],
            yaw: wrap_angle(n[8]),
        },
        omega: Vec3::new(rates[6], rates[7], n[9]),
    };
    if !next.is_finite() {
        return Err(Error::NonFiniteState(format!("{next:?}")));
    }
    Ok(next)
}

/// Decoupled PD heading controller producing a yaw-rate reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct YawPd {
    pub kp: f64,
    pub kd: f64,
    pub max_rate: f64,
}

impl Default for YawPd {
    fn default() -> Self {
        Self {
            kp: 1.0,
            kd: 0.1,
            max_rate: 0.75,
        }
    }
}

impl YawPd {
    /// Rate before clamping.
    pub fn raw_rate(&self, state: &VehicleState, psi_ref: f64) -> f64 {
        self.kp * wrap_angle(psi_ref - state.att.yaw) - self.kd * state.omega.z
    }

    pub fn rate(&self, state: &VehicleState, psi_ref: f64) -> f64 {
        self.raw_rate(state, psi_ref).clamp(-self.max_rate, self.max_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn run(state: VehicleState, cmd: &ControlCommand, dt: f64, steps: usize, prm: &PlantParams) -> VehicleState {
        let mut s = state;
        for _ in 0..steps {
            s = step_plant(&s, cmd, dt, prm).unwrap();
        }
        s
    }

    #[test]
    fn hover_is_a_fixed_point() {
        let prm = PlantParams::default();
        let s0 = VehicleState::at_rest(Vec3::new(1.0, 2.0, 1.5), 0.4);
        let s1 = run(s0, &ControlCommand::hover(prm.gravity), 0.01, 100, &prm);
        assert_relative_eq!(s1.p, s0.p, epsilon = 1e-12);
        assert_relative_eq!(s1.v, Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn free_fall_from_rest() {
        let prm = PlantParams::default();
        let s0 = VehicleState::at_rest(Vec3::new(0.0, 0.0, 10.0), 0.0);
        let cmd = ControlCommand { thrust: 0.0, ..ControlCommand::hover(prm.gravity) };
        let s1 = step_plant(&s0, &cmd, 0.01, &prm).unwrap();
        // linear drag: v(t) = -(g/k)(1 - exp(-k t))
        let k = prm.drag.z;
        let exact = -(prm.gravity / k) * (1.0 - (-k * 0.01f64).exp());
        assert_relative_eq!(s1.v.z, exact, epsilon = 1e-9);
    }

    #[test]
    fn pitch_step_matches_fine_integration() {
        let prm = PlantParams::default();
        let cmd = ControlCommand { pitch_ref: 0.1, ..ControlCommand::hover(prm.gravity) };
        let s0 = VehicleState::at_rest(Vec3::new(0.0, 0.0, 2.0), 0.0);
        let coarse = run(s0, &cmd, 0.01, 100, &prm);

        // Reference: explicit Euler with a 1e-5 s step, written out independently.
        let (g, tau, k) = (prm.gravity, prm.tau_attitude, prm.gain_attitude);
        let (mut p, mut v, mut th) = ([0.0, 0.0, 2.0f64], [0.0f64; 3], 0.0f64);
        let h = 1e-5;
        for _ in 0..100_000 {
            let a = [
                g * th.sin() - prm.drag.x * v[0],
                -prm.drag.y * v[1],
                g * th.cos() - g - prm.drag.z * v[2],
            ];
            for i in 0..3 {
                p[i] += h * v[i];
                v[i] += h * a[i];
            }
            th += h * (k * 0.1 - th) / tau;
        }
        let err = (coarse.p - Vec3::new(p[0], p[1], p[2])).norm();
        assert!(err < 1e-3, "err={err}");
        assert_relative_eq!(coarse.att.pitch, th, epsilon = 1e-6);
    }

    #[test]
    fn energy_conserved_without_thrust_or_drag() {
        let prm = PlantParams { drag: Vec3::zeros(), ..PlantParams::default() };
        let mut s = VehicleState::at_rest(Vec3::new(0.0, 0.0, 20.0), 0.0);
        s.v = Vec3::new(1.0, -0.5, 2.0);
        let energy = |s: &VehicleState| 0.5 * s.v.norm_squared() + prm.gravity * s.p.z;
        let e0 = energy(&s);
        let cmd = ControlCommand { thrust: 0.0, ..ControlCommand::hover(prm.gravity) };
        let s = run(s, &cmd, 0.01, 100, &prm);
        assert!((energy(&s) - e0).abs() < 1e-9);
    }

    #[test]
    fn attitude_loop_is_bounded() {
        let prm = PlantParams::default();
        let mut s = VehicleState::at_rest(Vec3::new(0.0, 0.0, 50.0), 0.0);
        let refs = [0.3, -0.3, 0.1, 0.3, -0.2];
        for (i, r) in refs.iter().cycle().take(200).enumerate() {
            let cmd = ControlCommand { roll_ref: *r, pitch_ref: -*r, ..ControlCommand::hover(prm.gravity) };
            s = step_plant(&s, &cmd, 0.01, &prm).unwrap();
            assert!(s.att.roll.abs() <= prm.gain_attitude * 0.3 + 1e-12, "step {i}");
            assert!(s.att.pitch.abs() <= prm.gain_attitude * 0.3 + 1e-12, "step {i}");
        }
    }

    #[test]
    fn stepping_is_deterministic() {
        let prm = PlantParams::default();
        let cmd = ControlCommand { thrust: 10.1, roll_ref: 0.05, pitch_ref: 0.12, yaw_rate_ref: 0.3 };
        let s0 = VehicleState::at_rest(Vec3::new(0.3, 0.1, 1.0), 0.2);
        let a = run(s0, &cmd, 0.01, 250, &prm);
        let b = run(s0, &cmd, 0.01, 250, &prm);
        assert_eq!(a.to_array().map(f64::to_bits), b.to_array().map(f64::to_bits));
    }

    #[test]
    fn rejects_non_finite_state_and_bad_dt() {
        let prm = PlantParams::default();
        let mut s = VehicleState::at_rest(Vec3::zeros(), 0.0);
        let cmd = ControlCommand::hover(prm.gravity);
        assert!(step_plant(&s, &cmd, 0.05, &prm).is_err());
        s.v.x = f64::NAN;
        assert!(matches!(step_plant(&s, &cmd, 0.01, &prm), Err(Error::NonFiniteState(_))));
    }

    #[test]
    fn throttle_mapping() {
        let c = ControlCommand::hover(9.81);
        assert_relative_eq!(c.throttle(9.81), 0.5);
        let c = ControlCommand { thrust: 100.0, ..c };
        assert_eq!(c.throttle(9.81), 1.0);
    }

    #[test]
    fn yaw_pd_cases() {
        let pd = YawPd { kp: 1.0, kd: 0.1, max_rate: 10.0 };
        let s = VehicleState::at_rest(Vec3::zeros(), 0.7);
        assert_eq!(pd.rate(&s, 0.7), 0.0);
        let s0 = VehicleState::at_rest(Vec3::zeros(), 0.0);
        assert_relative_eq!(pd.rate(&s0, PI / 2.0), PI / 2.0);
        let clamped = YawPd { max_rate: 0.75, ..pd };
        assert_relative_eq!(clamped.rate(&s0, PI / 2.0), 0.75);
    }

    #[test]
    fn yaw_pd_takes_the_short_way_round() {
        let pd = YawPd { kp: 1.0, kd: 0.0, max_rate: 100.0 };
        // grid over angle pairs, oracle: the error of least magnitude among e + 2k*pi
        let n = 73;
        for i in 0..n {
            for j in 0..n {
                let psi = -PI + 2.0 * PI * (i as f64 + 0.5) / n as f64;
                let r = -PI + 2.0 * PI * (j as f64 + 0.25) / n as f64;
                let raw = r - psi;
                let oracle = [raw - 2.0 * PI, raw, raw + 2.0 * PI]
                    .into_iter()
                    .min_by(|a, b| a.abs().total_cmp(&b.abs()))
                    .unwrap();
                let s = VehicleState::at_rest(Vec3::zeros(), psi);
                assert_relative_eq!(pd.rate(&s, r), oracle, epsilon = 1e-9);
            }
        }
        // raw error -6.2 rad across the boundary is commanded as +0.083 rad
        let s = VehicleState::at_rest(Vec3::zeros(), 3.1);
        assert!(pd.rate(&s, -3.1) > 0.0);
    }
}
