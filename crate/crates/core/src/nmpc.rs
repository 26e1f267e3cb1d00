//! Reference-tracking NMPC over the 8-state yaw-compensated model.
//!
//! The decision variables are the `N` inputs `[thrust, roll_ref, pitch_ref]`
//! of the horizon (single shooting). Input boxes are enforced by projection;
//! the roll/pitch rate limits between consecutive stages are handled with a
//! quadratic penalty whose weight doubles across outer iterations. The rate
//! limit against the previously applied command is folded into the box of the
//! first stage, so the command that is actually applied always satisfies it.
//!
//! The inner solver is an accelerated projected gradient method (FISTA with
//! backtracking and adaptive restart), diagonally scaled with a Gauss-Newton
//! estimate of the Hessian diagonal at hover.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlCommand, PlantParams, VehicleState};
use crate::error::{Error, Result};
use crate::geometry::{world_vector_to_body, Vec3};

pub const NX: usize = 8;
pub const NU: usize = 3;

pub type Input = [f64; NU];

/// `[p, v, roll, pitch]` in the yaw-compensated frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NmpcState {
    pub p: Vec3,
    pub v: Vec3,
    pub roll: f64,
    pub pitch: f64,
}

impl NmpcState {
    /// Hover at `p` in the yaw-compensated frame.
    pub fn hover_at(p: Vec3) -> Self {
        Self {
            p,
            ..Self::default()
        }
    }

    /// Expresses a vehicle state in its own yaw-aligned frame, with the
    /// position offset by `origin` (world frame, usually the vehicle position).
    pub fn from_vehicle(state: &VehicleState, origin: &Vec3) -> Self {
        let yaw = state.att.yaw;
        Self {
            p: world_vector_to_body(&(state.p - origin), yaw),
            v: world_vector_to_body(&state.v, yaw),
            roll: state.att.roll,
            pitch: state.att.pitch,
        }
    }

    pub fn to_array(&self) -> [f64; NX] {
        [
            self.p.x, self.p.y, self.p.z, self.v.x, self.v.y, self.v.z, self.roll, self.pitch,
        ]
    }

    pub fn from_array(a: &[f64; NX]) -> Self {
        Self {
            p: Vec3::new(a[0], a[1], a[2]),
            v: Vec3::new(a[3], a[4], a[5]),
            roll: a[6],
            pitch: a[7],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmpcWeights {
    /// State weights; the first three entries are replaced by the adaptive
    /// position weight at solve time.
    pub q_x: [f64; NX],
    pub q_u: [f64; NU],
    pub q_du: [f64; NU],
    pub q_p_min: f64,
    pub q_p_max: f64,
    pub c: f64,
}

impl Default for NmpcWeights {
    fn default() -> Self {
        Self {
            q_x: [6.0, 6.0, 6.0, 3.0, 3.0, 3.0, 1.0, 1.0],
            q_u: [2.0, 8.0, 8.0],
            q_du: [5.0, 20.0, 20.0],
            q_p_min: 2.0,
            q_p_max: 12.0,
            c: 5.0,
        }
    }
}

impl NmpcWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self.q_x.iter().chain(&self.q_u).chain(&self.q_du);
        if all.clone().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter("NMPC weights must be finite and >= 0".into()));
        }
        if !(self.q_p_min > 0.0 && self.q_p_min <= self.q_p_max && self.c > 0.0) {
            return Err(Error::InvalidParameter(
                "NMPC requires 0 < q_p_min <= q_p_max and c > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn with_position_weight(&self, q_p: f64) -> Self {
        let mut w = *self;
        w.q_x[0] = q_p;
        w.q_x[1] = q_p;
        w.q_x[2] = q_p;
        w
    }
}

/// Maps the repulsive force magnitude (before any saturation) to the
/// position-tracking weight: `q_min + (q_max - q_min) / (1 + c * |F_r|)`.
pub fn adapt_position_weights(weights: &NmpcWeights, repulsive_force_magnitude: f64) -> f64 {
    let f = repulsive_force_magnitude.max(0.0);
    weights.q_p_min + (weights.q_p_max - weights.q_p_min) / (1.0 + weights.c * f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputBounds {
    pub u_min: Input,
    pub u_max: Input,
    pub d_roll_max: f64,
    pub d_pitch_max: f64,
}

impl Default for InputBounds {
    fn default() -> Self {
        let g = 9.81;
        Self {
            u_min: [0.0, -0.5, -0.5],
            u_max: [1.5 * g, 0.5, 0.5],
            d_roll_max: 0.15,
            d_pitch_max: 0.15,
        }
    }
}

impl InputBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = (0..NU).all(|i| self.u_min[i] <= self.u_max[i])
            && self.u_min[0] >= 0.0
            && self.d_roll_max > 0.0
            && self.d_pitch_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("invalid NMPC input bounds".into()))
        }
    }

    fn rate_limit(&self, channel: usize) -> Option<f64> {
        match channel {
            1 => Some(self.d_roll_max),
            2 => Some(self.d_pitch_max),
            _ => None,
        }
    }
}

/// Prediction model constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionModel {
    pub gravity: f64,
    pub tau: f64,
    pub gain: f64,
    pub drag: Vec3,
    pub dt: f64,
}

impl PredictionModel {
    pub fn from_plant(plant: &PlantParams, dt: f64) -> Self {
        Self {
            gravity: plant.gravity,
            tau: plant.tau_attitude,
            gain: plant.gain_attitude,
            drag: plant.drag,
            dt,
        }
    }

    pub fn hover_input(&self) -> Input {
        [self.gravity, 0.0, 0.0]
    }

    /// Forward-Euler step of the yaw-compensated model.
    pub fn step(&self, x: &[f64; NX], u: &Input) -> [f64; NX] {
        let dt = self.dt;
        let (sr, cr) = x[6].sin_cos();
        let (sp, cp) = x[7].sin_cos();
        let t = u[0];
        [
            x[0] + dt * x[3],
            x[1] + dt * x[4],
            x[2] + dt * x[5],
            x[3] + dt * (t * sp * cr - self.drag.x * x[3]),
            x[4] + dt * (-t * sr - self.drag.y * x[4]),
            x[5] + dt * (t * cp * cr - self.gravity - self.drag.z * x[5]),
            x[6] + dt * (self.gain * u[1] - x[6]) / self.tau,
            x[7] + dt * (self.gain * u[2] - x[7]) / self.tau,
        ]
    }

    /// Applies the transposed Jacobians of `step` at `(x, u)` to `lam`:
    /// returns `(df/dx^T lam, df/du^T lam)`.
    fn step_adjoint(&self, x: &[f64; NX], u: &Input, lam: &[f64; NX]) -> ([f64; NX], Input) {
        let dt = self.dt;
        let (sr, cr) = x[6].sin_cos();
        let (sp, cp) = x[7].sin_cos();
        let t = u[0];
        let a = 1.0 - dt / self.tau;
        let mut gx = [0.0; NX];
        gx[0] = lam[0];
        gx[1] = lam[1];
        gx[2] = lam[2];
        gx[3] = dt * lam[0] + (1.0 - dt * self.drag.x) * lam[3];
        gx[4] = dt * lam[1] + (1.0 - dt * self.drag.y) * lam[4];
        gx[5] = dt * lam[2] + (1.0 - dt * self.drag.z) * lam[5];
        gx[6] = dt * t * (-sp * sr) * lam[3] + dt * (-t * cr) * lam[4] + dt * (-t * cp * sr) * lam[5]
            + a * lam[6];
        gx[7] = dt * t * (cp * cr) * lam[3] + dt * (-t * sp * cr) * lam[5] + a * lam[7];
        let gu = [
            dt * (sp * cr * lam[3] - sr * lam[4] + cp * cr * lam[5]),
            dt * self.gain / self.tau * lam[6],
            dt * self.gain / self.tau * lam[7],
        ];
        (gx, gu)
    }
}

/// One penalized optimal-control problem instance.
#[derive(Debug, Clone)]
pub struct Ocp {
    pub model: PredictionModel,
    pub x0: [f64; NX],
    pub x_ref: [f64; NX],
    pub u_ref: Input,
    pub u_prev: Input,
    pub q_x: [f64; NX],
    pub q_u: Input,
    pub q_du: Input,
    pub bounds: InputBounds,
    /// Weight of the quadratic rate-constraint penalty.
    pub penalty: f64,
}

impl Ocp {
    pub fn rollout(&self, u: &[Input]) -> Vec<[f64; NX]> {
        let mut xs = Vec::with_capacity(u.len() + 1);
        xs.push(self.x0);
        for uj in u {
            let next = self.model.step(xs.last().unwrap(), uj);
            xs.push(next);
        }
        xs
    }

    /// Rate-limit excess of stages `1..N` (the first stage is boxed).
    fn rate_excess(&self, u: &[Input], j: usize, c: usize) -> f64 {
        let lim = self.bounds.rate_limit(c).unwrap_or(f64::INFINITY);
        let d = u[j][c] - u[j - 1][c];
        (d.abs() - lim).max(0.0) * d.signum()
    }

    /// Tracking cost without the penalty term.
    pub fn tracking_cost(&self, u: &[Input]) -> f64 {
        let xs = self.rollout(u);
        let mut j_total = 0.0;
        for (j, uj) in u.iter().enumerate() {
            let x = &xs[j + 1];
            for i in 0..NX {
                let e = x[i] - self.x_ref[i];
                j_total += self.q_x[i] * e * e;
            }
            let up = if j == 0 { &self.u_prev } else { &u[j - 1] };
            for c in 0..NU {
                let e = uj[c] - self.u_ref[c];
                let d = uj[c] - up[c];
                j_total += self.q_u[c] * e * e + self.q_du[c] * d * d;
            }
        }
        j_total
    }

    pub fn penalty_cost(&self, u: &[Input]) -> f64 {
        let mut p = 0.0;
        for j in 1..u.len() {
            for c in 1..NU {
                let e = self.rate_excess(u, j, c);
                p += e * e;
            }
        }
        self.penalty * p
    }

    pub fn cost(&self, u: &[Input]) -> f64 {
        self.tracking_cost(u) + self.penalty_cost(u)
    }

    /// Penalized cost and its exact gradient (adjoint sweep).
    pub fn cost_and_gradient(&self, u: &[Input], grad: &mut [Input]) -> f64 {
        let n = u.len();
        let xs = self.rollout(u);
        let mut total = 0.0;
        for j in 0..n {
            let up = if j == 0 { &self.u_prev } else { &u[j - 1] };
            for c in 0..NU {
                let e = u[j][c] - self.u_ref[c];
                let d = u[j][c] - up[c];
                total += self.q_u[c] * e * e + self.q_du[c] * d * d;
                grad[j][c] = 2.0 * self.q_u[c] * e + 2.0 * self.q_du[c] * d;
                if j + 1 < n {
                    grad[j][c] -= 2.0 * self.q_du[c] * (u[j + 1][c] - u[j][c]);
                }
            }
        }
        for j in 1..n {
            for c in 1..NU {
                let e = self.rate_excess(u, j, c);
                total += self.penalty * e * e;
                grad[j][c] += 2.0 * self.penalty * e;
                grad[j - 1][c] -= 2.0 * self.penalty * e;
            }
        }
        // adjoint: lam_k = dJ/dx_k
        let mut lam = [0.0; NX];
        for k in (1..=n).rev() {
            let x = &xs[k];
            for i in 0..NX {
                let e = x[i] - self.x_ref[i];
                total += self.q_x[i] * e * e;
                lam[i] += 2.0 * self.q_x[i] * e;
            }
            let (gx, gu) = self.model.step_adjoint(&xs[k - 1], &u[k - 1], &lam);
            for c in 0..NU {
                grad[k - 1][c] += gu[c];
            }
            lam = gx;
        }
        total
    }

    /// Per-stage box, with the first stage also limited to the rate band around `u_prev`.
    pub fn stage_box(&self, j: usize) -> (Input, Input) {
        let mut lo = self.bounds.u_min;
        let mut hi = self.bounds.u_max;
        if j == 0 {
            for c in 1..NU {
                let lim = self.bounds.rate_limit(c).unwrap();
                let a = (self.u_prev[c] - lim).clamp(self.bounds.u_min[c], self.bounds.u_max[c]);
                let b = (self.u_prev[c] + lim).clamp(self.bounds.u_min[c], self.bounds.u_max[c]);
                lo[c] = a;
                hi[c] = b;
            }
        }
        (lo, hi)
    }

    pub fn project(&self, u: &mut [Input]) {
        for (j, uj) in u.iter_mut().enumerate() {
            let (lo, hi) = self.stage_box(j);
            for c in 0..NU {
                uj[c] = uj[c].clamp(lo[c], hi[c]);
            }
        }
    }

    /// Forward pass clamping each stage into the rate band around the one
    /// before it, intersected with the box; leaves no rate excess.
    pub fn enforce_rates(&self, u: &mut [Input]) {
        let mut prev = self.u_prev;
        for uj in u.iter_mut() {
            for c in 1..NU {
                let lim = self.bounds.rate_limit(c).unwrap();
                let lo = (prev[c] - lim).clamp(self.bounds.u_min[c], self.bounds.u_max[c]);
                let hi = (prev[c] + lim).clamp(self.bounds.u_min[c], self.bounds.u_max[c]);
                uj[c] = uj[c].clamp(lo, hi);
            }
            prev = *uj;
        }
    }

    /// Largest roll/pitch rate-limit excess over the whole sequence, including
    /// the step from `u_prev`.
    pub fn max_rate_violation(&self, u: &[Input]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..u.len() {
            let up = if j == 0 { &self.u_prev } else { &u[j - 1] };
            for c in 1..NU {
                let lim = self.bounds.rate_limit(c).unwrap();
                worst = worst.max((u[j][c] - up[c]).abs() - lim);
            }
        }
        worst.max(0.0)
    }

    /// Gauss-Newton Hessian diagonal of the tracking cost, linearized at `u`.
    /// The rate penalty is left out; backtracking absorbs it.
    pub fn gauss_newton_diagonal(&self, u: &[Input]) -> Vec<Input> {
        let n = u.len();
        let xs = self.rollout(u);
        let mut diag = vec![[0.0; NU]; n];
        // propagate each input's sensitivity column through the state Jacobians
        for j in 0..n {
            for c in 0..NU {
                let mut s = self.input_jacobian_column(&xs[j], c);
                let mut acc = 0.0;
                for k in (j + 1)..=n {
                    for i in 0..NX {
                        acc += 2.0 * self.q_x[i] * s[i] * s[i];
                    }
                    if k < n {
                        s = self.state_jacobian_apply(&xs[k], &u[k], &s);
                    }
                }
                let du_terms = if j + 1 < n { 2.0 } else { 1.0 };
                diag[j][c] = acc + 2.0 * self.q_u[c] + 2.0 * self.q_du[c] * du_terms;
            }
        }
        diag
    }

    fn input_jacobian_column(&self, x: &[f64; NX], c: usize) -> [f64; NX] {
        let dt = self.model.dt;
        let (sr, cr) = x[6].sin_cos();
        let (sp, cp) = x[7].sin_cos();
        let mut col = [0.0; NX];
        match c {
            0 => {
                col[3] = dt * sp * cr;
                col[4] = -dt * sr;
                col[5] = dt * cp * cr;
            }
            1 => col[6] = dt * self.model.gain / self.model.tau,
            _ => col[7] = dt * self.model.gain / self.model.tau,
        }
        col
    }

    fn state_jacobian_apply(&self, x: &[f64; NX], u: &Input, s: &[f64; NX]) -> [f64; NX] {
        let m = &self.model;
        let dt = m.dt;
        let (sr, cr) = x[6].sin_cos();
        let (sp, cp) = x[7].sin_cos();
        let t = u[0];
        let a = 1.0 - dt / m.tau;
        [
            s[0] + dt * s[3],
            s[1] + dt * s[4],
            s[2] + dt * s[5],
            (1.0 - dt * m.drag.x) * s[3] + dt * t * (-sp * sr * s[6] + cp * cr * s[7]),
            (1.0 - dt * m.drag.y) * s[4] - dt * t * cr * s[6],
            (1.0 - dt * m.drag.z) * s[5] + dt * t * (-cp * sr * s[6] - sp * cr * s[7]),
            a * s[6],
            a * s[7],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub horizon: usize,
    pub dt: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Stopping tolerance on the scaled gradient-mapping norm.
    pub tolerance: f64,
    pub penalty_init: f64,
    /// Allowed rate-limit excess on predicted stages, rad.
    pub rate_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            horizon: 20,
            dt: 0.05,
            max_outer: 10,
            max_inner: 100,
            tolerance: 1e-4,
            penalty_init: 200.0,
            rate_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcSolution {
    /// First input of the optimized sequence; `yaw_rate_ref` is left at zero.
    pub command: ControlCommand,
    pub inputs: Vec<Input>,
    pub predicted: Vec<NmpcState>,
    pub cost: f64,
    pub iterations: usize,
    pub max_rate_violation: f64,
    /// Set when the iteration budget ran out before convergence or the
    /// predicted rates still exceed the tolerance.
    pub degraded: bool,
}

/// Receding-horizon solver with warm start; one instance per vehicle.
#[derive(Debug, Clone)]
pub struct Nmpc {
    pub settings: SolverSettings,
    pub model: PredictionModel,
    warm: Option<Vec<Input>>,
    lipschitz: f64,
}

impl Nmpc {
    pub fn new(plant: &PlantParams, settings: SolverSettings) -> Self {
        Self {
            model: PredictionModel::from_plant(plant, settings.dt),
            settings,
            warm: None,
            lipschitz: 1.0,
        }
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn solve(
        &mut self,
        current: &NmpcState,
        x_ref: &NmpcState,
        u_prev: &ControlCommand,
        weights: &NmpcWeights,
        bounds: &InputBounds,
    ) -> NmpcSolution {
        let n = self.settings.horizon;
        let u_prev_arr = [u_prev.thrust, u_prev.roll_ref, u_prev.pitch_ref];
        let mut ocp = Ocp {
            model: self.model,
            x0: current.to_array(),
            x_ref: x_ref.to_array(),
            u_ref: self.model.hover_input(),
            u_prev: u_prev_arr,
            q_x: weights.q_x,
            q_u: weights.q_u,
            q_du: weights.q_du,
            bounds: *bounds,
            penalty: self.settings.penalty_init,
        };
        let mut u = match self.warm.take() {
            Some(w) if w.len() == n => {
                let mut s: Vec<Input> = w[1..].to_vec();
                s.push(w[n - 1]);
                s
            }
            _ => vec![u_prev_arr; n],
        };
        ocp.project(&mut u);

        let diag = ocp.gauss_newton_diagonal(&u);
        let scale: Vec<Input> = diag
            .iter()
            .map(|d| [1.0 / d[0].max(1e-9), 1.0 / d[1].max(1e-9), 1.0 / d[2].max(1e-9)])
            .collect();

        let mut iterations = 0;
        let mut converged = false;
        for _outer in 0..self.settings.max_outer {
            converged = self.inner_solve(&ocp, &mut u, &scale, &mut iterations);
            if ocp.max_rate_violation(&u) <= 0.5 * self.settings.rate_tolerance {
                break;
            }
            ocp.penalty *= 2.0;
        }
        ocp.enforce_rates(&mut u);
        let violation = ocp.max_rate_violation(&u);
        let predicted = ocp.rollout(&u).iter().map(NmpcState::from_array).collect();
        let cost = ocp.tracking_cost(&u);
        let command = ControlCommand {
            thrust: u[0][0],
            roll_ref: u[0][1],
            pitch_ref: u[0][2],
            yaw_rate_ref: 0.0,
        };
        self.warm = Some(u.clone());
        NmpcSolution {
            command,
            inputs: u,
            predicted,
            cost,
            iterations,
            max_rate_violation: violation,
            degraded: !converged || violation > self.settings.rate_tolerance,
        }
    }

    /// FISTA in scaled coordinates `u = D^{1/2} z`; returns whether the
    /// gradient-mapping norm fell below tolerance.
    fn inner_solve(&mut self, ocp: &Ocp, u: &mut Vec<Input>, scale: &[Input], iterations: &mut usize) -> bool {
        let n = u.len();
        let mut grad = vec![[0.0; NU]; n];
        let mut x_prev = u.clone();
        let mut y = u.clone();
        let mut t_k: f64 = 1.0;
        let mut f_x = ocp.cost(u);
        let mut trial = u.clone();
        let mut big_l = self.lipschitz.max(1e-3);
        for _ in 0..self.settings.max_inner {
            *iterations += 1;
            let f_y = ocp.cost_and_gradient(&y, &mut grad);
            // backtracking on the scaled quadratic upper bound
            let (f_trial, sq) = loop {
                let mut sq = 0.0;
                let mut lin = 0.0;
                for j in 0..n {
                    for c in 0..NU {
                        trial[j][c] = y[j][c] - scale[j][c] * grad[j][c] / big_l;
                    }
                }
                ocp.project(&mut trial);
                for j in 0..n {
                    for c in 0..NU {
                        let d = trial[j][c] - y[j][c];
                        lin += grad[j][c] * d;
                        sq += d * d / scale[j][c];
                    }
                }
                let f_trial = ocp.cost(&trial);
                if f_trial <= f_y + lin + 0.5 * big_l * sq + 1e-12 * f_y.abs() || big_l > 1e12 {
                    break (f_trial, sq);
                }
                big_l *= 2.0;
            };
            let step_norm = big_l * sq.sqrt();
            // adaptive restart when the objective goes up
            if f_trial > f_x {
                t_k = 1.0;
                y.clone_from(u);
                if step_norm <= self.settings.tolerance {
                    self.lipschitz = big_l * 0.5;
                    return true;
                }
                big_l *= 0.9;
                continue;
            }
            x_prev.clone_from(u);
            u.clone_from(&trial);
            f_x = f_trial;
            if step_norm <= self.settings.tolerance {
                self.lipschitz = big_l * 0.5;
                return true;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
            let beta = (t_k - 1.0) / t_next;
            for j in 0..n {
                for c in 0..NU {
                    y[j][c] = u[j][c] + beta * (u[j][c] - x_prev[j][c]);
                }
            }
            ocp.project(&mut y);
            t_k = t_next;
            big_l *= 0.9;
        }
        self.lipschitz = big_l;
        false
    }
}
