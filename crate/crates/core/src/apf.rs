//! Reactive obstacle avoidance with an artificial potential field computed
//! directly on the LiDAR point cloud.
//!
//! Every point inside the influence radius pushes the vehicle away with a
//! force that fades to zero at the radius; points inside the critical radius
//! add a constant push, but only once more than `dust_gate` of them exist so
//! a few dust returns cannot trigger it. The resulting repulsion is
//! saturated, rate limited and summed with the attraction to the waypoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// LiDAR returns relative to the sensor, expressed in body axes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    /// Drops non-finite coordinates and self-returns closer than `self_radius`.
    pub fn ingest(raw: impl IntoIterator<Item = Vec3>, self_radius: f64) -> Self {
        let points = raw
            .into_iter()
            .filter(|p| p.iter().all(|c| c.is_finite()) && p.norm() >= self_radius)
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Voxel-averages the points inside `radius`; points outside carry no force
    /// and are dropped. The voxel edge grows until at most `max_points` remain.
    pub fn thinned(&self, radius: f64, voxel: f64, max_points: usize) -> Self {
        let near: Vec<Vec3> = self.points.iter().copied().filter(|p| p.norm() <= radius).collect();
        let mut edge = voxel;
        loop {
            let out = voxel_average(&near, edge);
            if out.len() <= max_points.max(1) || edge > 2.0 * radius {
                return Self { points: out };
            }
            edge *= 1.25;
        }
    }
}

fn voxel_average(points: &[Vec3], edge: f64) -> Vec<Vec3> {
    if edge <= 0.0 {
        return points.to_vec();
    }
    let mut keyed: Vec<([i64; 3], usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let k = [
                (p.x / edge).floor() as i64,
                (p.y / edge).floor() as i64,
                (p.z / edge).floor() as i64,
            ];
            (k, i)
        })
        .collect();
    keyed.sort_unstable();
    let mut out = Vec::new();
    let mut i = 0;
    while i < keyed.len() {
        let key = keyed[i].0;
        let mut sum = Vec3::zeros();
        let mut n = 0.0;
        while i < keyed.len() && keyed[i].0 == key {
            sum += points[keyed[i].1];
            n += 1.0;
            i += 1;
        }
        out.push(sum / n);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApfParams {
    /// Influence radius, m.
    pub r_f: f64,
    /// Critical radius, m.
    pub r_c: f64,
    /// Per-point repulsive gain, applied per axis.
    pub gain: Vec3,
    /// Per-point gain inside the critical radius.
    pub gain_critical: f64,
    /// The critical term is zero while at most this many points are inside `r_c`.
    pub dust_gate: usize,
    pub f_max: f64,
    /// Largest change of the repulsive force per control cycle.
    pub df_max: f64,
    /// Voxel edge used to thin the cloud before summation, m.
    pub voxel: f64,
    pub max_points: usize,
    /// Returns closer than this are treated as hits on the airframe.
    pub self_radius: f64,
}

impl Default for ApfParams {
    fn default() -> Self {
        Self {
            r_f: 3.0,
            r_c: 0.75,
            gain: Vec3::new(0.008, 0.008, 0.004),
            gain_critical: 0.05,
            dust_gate: 3,
            f_max: 1.0,
            df_max: 0.1,
            voxel: 0.1,
            max_points: 4000,
            self_radius: 0.35,
        }
    }
}

impl ApfParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r_c > 0.0
            && self.r_c < self.r_f
            && self.gain.iter().all(|g| *g > 0.0)
            && self.gain_critical > 0.0
            && self.f_max > 0.0
            && self.df_max > 0.0
            && self.voxel >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("invalid potential-field parameters".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RepulsiveForce {
    pub force: Vec3,
    /// Norm of `force` before saturation; drives the adaptive NMPC weights.
    pub raw_magnitude: f64,
    pub n_influence: usize,
    pub n_critical: usize,
}

/// Fading per-point force plus the gated critical-radius term.
pub fn repulsive_force(cloud: &PointCloud, params: &ApfParams) -> RepulsiveForce {
    let mut soft = Vec3::zeros();
    let mut critical = Vec3::zeros();
    let (mut n_inf, mut n_crit) = (0, 0);
    for rho in &cloud.points {
        let d = rho.norm();
        if d == 0.0 || d > params.r_f {
            continue;
        }
        let away = -rho / d;
        let fade = (1.0 - d / params.r_f).powi(2);
        soft += params.gain.component_mul(&away) * fade;
        n_inf += 1;
        if d <= params.r_c {
            critical += away * params.gain_critical;
            n_crit += 1;
        }
    }
    let force = if n_crit > params.dust_gate { soft + critical } else { soft };
    RepulsiveForce {
        force,
        raw_magnitude: force.norm(),
        n_influence: n_inf,
        n_critical: n_crit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ComposedForce {
    /// Total force, at most unit length.
    pub total: Vec3,
    /// Saturated and rate-limited repulsion; the next cycle's `f_r_prev`.
    pub repulsive: Vec3,
}

/// Saturation, rate limit and normalization, in that order.
pub fn compose_force(f_a: &Vec3, f_r_now: &Vec3, f_r_prev: &Vec3, params: &ApfParams) -> ComposedForce {
    let mut f_r = *f_r_now;
    let m = f_r.norm();
    if m > params.f_max {
        f_r *= params.f_max / m;
    }
    let delta = f_r - f_r_prev;
    let dm = delta.norm();
    if dm > params.df_max {
        f_r = f_r_prev + delta * (params.df_max / dm);
    }
    let mut f_a = *f_a;
    let am = f_a.norm();
    if am > 1.0 {
        f_a /= am;
    }
    let mut total = f_r + f_a;
    let tm = total.norm();
    if tm > 1.0 {
        total /= tm;
    }
    ComposedForce {
        total,
        repulsive: f_r,
    }
}

/// Keeps the previous cycle's repulsion between calls.
#[derive(Debug, Clone, Default)]
pub struct ForceComposer {
    prev: Vec3,
}

impl ForceComposer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn previous(&self) -> Vec3 {
        self.prev
    }

    pub fn compose(&mut self, f_a: &Vec3, f_r_now: &Vec3, params: &ApfParams) -> ComposedForce {
        let out = compose_force(f_a, f_r_now, &self.prev, params);
        self.prev = out.repulsive;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AvoidanceSetpoint {
    /// Position reference in the body frame.
    pub p_ref: Vec3,
    pub force: ComposedForce,
    pub repulsion: RepulsiveForce,
}

/// Attraction `wp - p_hat`, composed with the cloud's repulsion, added back
/// onto the current body position.
pub fn avoidance_setpoint(
    wp_b: &Vec3,
    p_hat_b: &Vec3,
    cloud: &PointCloud,
    params: &ApfParams,
    composer: &mut ForceComposer,
) -> AvoidanceSetpoint {
    let repulsion = repulsive_force(cloud, params);
    avoidance_setpoint_with(wp_b, p_hat_b, repulsion, params, composer)
}

/// As [`avoidance_setpoint`] with a repulsion computed earlier (a scan is
/// reused by consecutive control cycles).
pub fn avoidance_setpoint_with(
    wp_b: &Vec3,
    p_hat_b: &Vec3,
    repulsion: RepulsiveForce,
    params: &ApfParams,
    composer: &mut ForceComposer,
) -> AvoidanceSetpoint {
    let f_a = wp_b - p_hat_b;
    let force = composer.compose(&f_a, &repulsion.force, params);
    AvoidanceSetpoint {
        p_ref: force.total + p_hat_b,
        force,
        repulsion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_gain() -> ApfParams {
        ApfParams { gain: Vec3::new(1.0, 1.0, 1.0), ..ApfParams::default() }
    }

    #[test]
    fn empty_and_boundary_clouds() {
        let p = ApfParams::default();
        assert_eq!(repulsive_force(&PointCloud::default(), &p).force, Vec3::zeros());
        let c = PointCloud::new(vec![Vec3::new(p.r_f, 0.0, 0.0)]);
        assert_eq!(repulsive_force(&c, &p).force, Vec3::zeros());
    }

    #[test]
    fn half_radius_point() {
        let p = unit_gain();
        let c = PointCloud::new(vec![Vec3::new(p.r_f / 2.0, 0.0, 0.0)]);
        let f = repulsive_force(&c, &p);
        assert_relative_eq!(f.force, Vec3::new(-0.25, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(f.raw_magnitude, 0.25);
    }

    #[test]
    fn origin_point_is_skipped() {
        let c = PointCloud::new(vec![Vec3::zeros(), Vec3::new(1.5, 0.0, 0.0)]);
        let f = repulsive_force(&c, &unit_gain());
        assert_eq!(f.n_influence, 1);
        assert!(f.force.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn dust_gate() {
        let p = ApfParams::default();
        let dust: Vec<Vec3> = (0..p.dust_gate).map(|i| Vec3::new(0.5, 0.01 * i as f64, 0.0)).collect();
        let gated = repulsive_force(&PointCloud::new(dust.clone()), &p);
        assert_eq!(gated.n_critical, p.dust_gate);
        let soft_only: Vec3 = dust
            .iter()
            .map(|r| p.gain.component_mul(&(-r / r.norm())) * (1.0 - r.norm() / p.r_f).powi(2))
            .sum();
        assert_relative_eq!(gated.force, soft_only, epsilon = 1e-15);
        let mut more = dust;
        more.push(Vec3::new(0.5, -0.02, 0.0));
        let open = repulsive_force(&PointCloud::new(more), &p);
        assert!(open.force.x < -p.gain_critical * 3.0);
    }

    #[test]
    fn compose_examples() {
        let p = ApfParams { f_max: 1.0, df_max: 0.3, ..ApfParams::default() };
        let z = Vec3::zeros();
        let f = compose_force(&Vec3::new(0.5, 0.0, 0.0), &z, &z, &p);
        assert_eq!(f.total, Vec3::new(0.5, 0.0, 0.0));
        let f = compose_force(&Vec3::new(3.0, 4.0, 0.0), &z, &z, &p);
        assert_relative_eq!(f.total, Vec3::new(0.6, 0.8, 0.0), epsilon = 1e-15);

        // step-by-step: rate limit to (0,-0.3,0), sum (1,-0.3,0), normalize
        let f = compose_force(&Vec3::new(1.0, 0.0, 0.0), &Vec3::new(0.0, -0.8, 0.0), &z, &p);
        assert_relative_eq!(f.repulsive, Vec3::new(0.0, -0.3, 0.0), epsilon = 1e-15);
        let n = (1.0f64 + 0.09).sqrt();
        assert_relative_eq!(f.total, Vec3::new(1.0 / n, -0.3 / n, 0.0), epsilon = 1e-15);
        assert_relative_eq!(f.total.x, 0.958, epsilon = 5e-4);
        assert_relative_eq!(f.total.y, -0.287, epsilon = 5e-4);
    }

    #[test]
    fn saturation_precedes_rate_limit() {
        let p = ApfParams { f_max: 0.5, df_max: 10.0, ..ApfParams::default() };
        let f = compose_force(&Vec3::zeros(), &Vec3::new(0.0, 4.0, 0.0), &Vec3::zeros(), &p);
        assert_relative_eq!(f.repulsive, Vec3::new(0.0, 0.5, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn setpoint_without_obstacles_is_the_waypoint() {
        let p = ApfParams::default();
        let mut comp = ForceComposer::new();
        let wp = Vec3::new(0.4, 0.0, 0.0);
        let sp = avoidance_setpoint(&wp, &Vec3::zeros(), &PointCloud::default(), &p, &mut comp);
        assert_relative_eq!(sp.p_ref, wp, epsilon = 1e-15);
        // far waypoint collapses to a unit step
        let sp = avoidance_setpoint(&Vec3::new(5.0, 0.0, 0.0), &Vec3::zeros(), &PointCloud::default(), &p, &mut comp);
        assert_relative_eq!(sp.p_ref, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn wall_on_the_left_shifts_reference_right() {
        let p = ApfParams::default();
        let mut comp = ForceComposer::new();
        let wall: Vec<Vec3> = (-10..=10)
            .flat_map(|i| (-3..=3).map(move |k| Vec3::new(0.1 * i as f64, 0.6 * p.r_f, 0.1 * k as f64)))
            .collect();
        let sp = avoidance_setpoint(&Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), &PointCloud::new(wall), &p, &mut comp);
        assert!(sp.p_ref.y < 0.0);
    }

    #[test]
    fn setpoint_equals_sequential_composition() {
        let p = ApfParams::default();
        let cloud = PointCloud::new(vec![
            Vec3::new(1.0, 0.5, 0.0),
            Vec3::new(0.4, -0.2, 0.1),
            Vec3::new(2.0, 1.0, -0.5),
        ]);
        let wp = Vec3::new(1.0, 0.2, 0.1);
        let prev = Vec3::new(0.01, -0.02, 0.0);
        let mut comp = ForceComposer { prev };
        let sp = avoidance_setpoint(&wp, &Vec3::zeros(), &cloud, &p, &mut comp);
        let fr = repulsive_force(&cloud, &p);
        let f = compose_force(&wp, &fr.force, &prev, &p);
        assert_eq!(sp.p_ref, f.total);
        assert_eq!(comp.previous(), f.repulsive);
    }

    #[test]
    fn thinning_caps_and_keeps_only_influence_points() {
        let pts: Vec<Vec3> = (0..20_000)
            .map(|i| {
                let a = i as f64 * 0.001;
                Vec3::new(2.0 * a.cos(), 2.0 * a.sin(), (i % 50) as f64 * 0.01 - 0.25)
            })
            .chain(std::iter::once(Vec3::new(10.0, 0.0, 0.0)))
            .collect();
        let c = PointCloud::new(pts).thinned(3.0, 0.02, 4000);
        assert!(c.len() <= 4000);
        assert!(c.points.iter().all(|p| p.norm() <= 3.0 + 1e-9));
        let self_filtered = PointCloud::ingest(vec![Vec3::new(0.1, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)], 0.35);
        assert_eq!(self_filtered.len(), 1);
    }

    fn arb_point() -> impl Strategy<Value = Vec3> {
        (-4.0..4.0f64, -4.0..4.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn total_force_is_unit_bounded_and_lipschitz(
            fa in arb_point(), fr1 in arb_point(), fr2 in arb_point(), prev in arb_point(),
        ) {
            let p = ApfParams::default();
            let prev = prev * 0.1;
            let a = compose_force(&fa, &fr1, &prev, &p);
            prop_assert!(a.total.norm() <= 1.0 + 1e-12);
            prop_assert!((a.repulsive - prev).norm() <= p.df_max + 1e-12);
            let b = compose_force(&fa, &fr2, &a.repulsive, &p);
            prop_assert!((b.total - a.total).norm() <= p.df_max + 1e-12);
        }

        #[test]
        fn mirror_symmetry(pts in proptest::collection::vec(arb_point(), 0..40)) {
            let p = ApfParams::default();
            let mirrored: Vec<Vec3> = pts.iter().map(|q| Vec3::new(q.x, -q.y, q.z)).collect();
            let a = repulsive_force(&PointCloud::new(pts), &p).force;
            let b = repulsive_force(&PointCloud::new(mirrored), &p).force;
            prop_assert!((a.x - b.x).abs() < 1e-12);
            prop_assert!((a.y + b.y).abs() < 1e-12);
            prop_assert!((a.z - b.z).abs() < 1e-12);
        }

        #[test]
        fn dust_inside_critical_radius_never_opens_gate(
            pts in proptest::collection::vec(arb_point(), 0..30),
            dust in proptest::collection::vec((0.1..0.7f64, -3.1..3.1f64), 3),
        ) {
            let p = ApfParams::default();
            let base: Vec<Vec3> = pts.into_iter().filter(|q| q.norm() > p.r_c).collect();
            let dust: Vec<Vec3> = dust.iter().map(|(r, a)| Vec3::new(r * a.cos(), r * a.sin(), 0.0)).collect();
            let mut with = base.clone();
            with.extend(dust.iter().copied());
            let f0 = repulsive_force(&PointCloud::new(base), &p).force;
            let f1 = repulsive_force(&PointCloud::new(with), &p).force;
            let soft: Vec3 = dust.iter()
                .map(|r| p.gain.component_mul(&(-r / r.norm())) * (1.0 - r.norm() / p.r_f).powi(2))
                .sum();
            prop_assert!((f1 - f0 - soft).norm() < 1e-12);
        }
    }
}
