//! Frames and rigid transforms.
//!
//! Conventions: the world frame is ENU. The body frame shares the vehicle
//! position as origin and is rotated from the world frame about `z` only, so
//! its `z` axis stays antiparallel to gravity. The camera frame has `z`
//! looking forward, `y` pointing down (parallel to gravity) and `x` to the
//! right. Full airframe attitude uses the ZYX Euler convention
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Roll, pitch and yaw in radians (ZYX convention).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Attitude {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Attitude {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            roll,
            pitch,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn level(yaw: f64) -> Self {
        Self::new(0.0, 0.0, yaw)
    }

    /// The vehicle is never inverted and yaw is wrapped.
    pub fn is_valid(&self) -> bool {
        self.roll.abs() < PI / 2.0
            && self.pitch.abs() < PI / 2.0
            && self.yaw > -PI
            && self.yaw <= PI
            && self.roll.is_finite()
            && self.pitch.is_finite()
    }

    /// Full world-from-airframe rotation.
    pub fn rotation(&self) -> Mat3 {
        yaw_rotation(self.yaw) * self.tilt()
    }

    /// Roll and pitch only: body(yaw-aligned)-from-airframe rotation.
    pub fn tilt(&self) -> Mat3 {
        let (sp, cp) = self.pitch.sin_cos();
        let (sr, cr) = self.roll.sin_cos();
        let ry = Mat3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
        let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
        ry * rx
    }
}

/// Rotation about the world `z` axis.
pub fn yaw_rotation(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rigid transform `p_parent = rotation * p_child + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for FrameTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl FrameTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Body-from-camera transform of a forward-looking camera: camera `z` is
    /// body `x`, camera `x` is body `-y`, camera `y` is body `-z`.
    pub fn forward_camera(translation: Vec3) -> Self {
        let rotation = Mat3::from_columns(&[
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(1.0, 0.0, 0.0),
        ]);
        Self {
            rotation,
            translation,
        }
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let err = self.rotation.transpose() * self.rotation - Mat3::identity();
        err.iter().all(|e| e.abs() <= tol) && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self * other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &FrameTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// World-from-body transform of the given state (yaw about `z` plus position).
pub fn world_from_body(state: &VehicleState) -> FrameTransform {
    FrameTransform::new(yaw_rotation(state.att.yaw), state.p)
}

pub fn body_to_world(p_b: &Vec3, state: &VehicleState) -> Vec3 {
    let (s, c) = state.att.yaw.sin_cos();
    Vec3::new(
        c * p_b.x - s * p_b.y + state.p.x,
        s * p_b.x + c * p_b.y + state.p.y,
        p_b.z + state.p.z,
    )
}

pub fn world_to_body(p_w: &Vec3, state: &VehicleState) -> Vec3 {
    let d = p_w - state.p;
    let (s, c) = state.att.yaw.sin_cos();
    Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
}

/// Rotates a free vector (velocity, force) from world into body axes.
pub fn world_vector_to_body(v: &Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
}

pub fn body_vector_to_world(v: &Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}

/// Chains camera -> body -> world. `mount` is the body-from-camera transform.
pub fn camera_to_world(p_c: &Vec3, mount: &FrameTransform, state: &VehicleState) -> Vec3 {
    body_to_world(&mount.apply(p_c), state)
}

pub fn world_to_camera(p_w: &Vec3, mount: &FrameTransform, state: &VehicleState) -> Vec3 {
    mount.inverse().apply(&world_to_body(p_w, state))
}

/// Pinhole intrinsics. Pixel `i` spans `[i, i + 1)`, so its center is `i + 0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    /// Centered intrinsics for a `width`×`height` image with the given full
    /// fields of view in radians.
    pub fn from_fov(width: usize, height: usize, hfov: f64, vfov: f64) -> Self {
        let (w, h) = (width as f64, height as f64);
        Self {
            fx: 0.5 * w / (0.5 * hfov).tan(),
            fy: 0.5 * h / (0.5 * vfov).tan(),
            cx: 0.5 * w,
            cy: 0.5 * h,
        }
    }

    /// Unit ray in the camera frame through image point `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }

    /// Image point of a camera-frame point, `None` behind the camera.
    pub fn project(&self, p_c: &Vec3) -> Option<(f64, f64)> {
        if p_c.z <= 1e-9 {
            return None;
        }
        Some((self.fx * p_c.x / p_c.z + self.cx, self.fy * p_c.y / p_c.z + self.cy))
    }

    /// Returns this scaled to an image `factor` times smaller.
    pub fn downscaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx / factor,
            fy: self.fy / factor,
            cx: self.cx / factor,
            cy: self.cy / factor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn state_at(p: Vec3, yaw: f64) -> VehicleState {
        VehicleState::at_rest(p, yaw)
    }

    #[test]
    fn body_to_world_identity_and_quarter_turn() {
        let s = state_at(Vec3::zeros(), 0.0);
        assert_eq!(body_to_world(&Vec3::new(1.0, 0.0, 0.0), &s), Vec3::new(1.0, 0.0, 0.0));
        let s = state_at(Vec3::zeros(), PI / 2.0);
        let w = body_to_world(&Vec3::new(1.0, 0.0, 0.0), &s);
        assert_relative_eq!(w, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn body_to_world_matches_planar_rotation() {
        let (x, y, z, psi) = (1.0_f64, 2.0_f64, 0.0_f64, 0.3_f64);
        // independent scalar rotation oracle
        let ox = 5.0 + x * psi.cos() - y * psi.sin();
        let oy = 5.0 + x * psi.sin() + y * psi.cos();
        let oz = 1.0 + z;
        let s = state_at(Vec3::new(5.0, 5.0, 1.0), psi);
        let w = body_to_world(&Vec3::new(x, y, z), &s);
        assert_relative_eq!(w, Vec3::new(ox, oy, oz), epsilon = 1e-12);
        // matrix route agrees with the closed form
        assert_relative_eq!(world_from_body(&s).apply(&Vec3::new(x, y, z)), w, epsilon = 1e-12);
    }

    #[test]
    fn camera_axis_alignment() {
        let mount = FrameTransform::forward_camera(Vec3::zeros());
        let s = state_at(Vec3::new(1.0, 2.0, 1.5), 0.0);
        let w = camera_to_world(&Vec3::new(0.0, 0.0, 2.0), &mount, &s);
        assert_relative_eq!(w, Vec3::new(3.0, 2.0, 1.5), epsilon = 1e-12);
        // camera x is to the right (body -y), camera y is down
        let w = camera_to_world(&Vec3::new(1.0, 1.0, 0.0), &mount, &s);
        assert_relative_eq!(w, Vec3::new(1.0, 1.0, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn camera_origin_maps_to_rotated_mount_offset() {
        let t = Vec3::new(0.2, 0.05, -0.1);
        let mount = FrameTransform::forward_camera(t);
        let s = state_at(Vec3::new(3.0, -1.0, 2.0), 1.1);
        let w = camera_to_world(&Vec3::zeros(), &mount, &s);
        assert_relative_eq!(w, s.p + yaw_rotation(1.1) * t, epsilon = 1e-12);
    }

    #[test]
    fn mount_is_orthonormal_and_inverse_composes_to_identity() {
        let m = FrameTransform::forward_camera(Vec3::new(0.1, 0.0, 0.02));
        assert!(m.is_orthonormal(1e-12));
        let id = m.compose(&m.inverse());
        assert_relative_eq!(id.rotation, Mat3::identity(), epsilon = 1e-12);
        assert_relative_eq!(id.translation, Vec3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-7.0), -7.0 + 2.0 * PI, epsilon = 1e-12);
    }

    #[test]
    fn yaw_pitch_roll_rotation_is_orthonormal() {
        let a = Attitude::new(0.3, -0.2, 2.0);
        let t = FrameTransform::new(a.rotation(), Vec3::zeros());
        assert!(t.is_orthonormal(1e-12));
        // thrust axis of a pitched-forward vehicle tips toward +x
        let e3 = Attitude::new(0.0, 0.2, 0.0).rotation() * Vec3::z();
        assert!(e3.x > 0.0);
        // positive roll tips the thrust axis toward -y
        let e3 = Attitude::new(0.2, 0.0, 0.0).rotation() * Vec3::z();
        assert!(e3.y < 0.0);
    }

    proptest! {
        #[test]
        fn body_world_round_trip(
            x in -50.0..50.0f64, y in -50.0..50.0f64, z in -10.0..10.0f64,
            px in -50.0..50.0f64, py in -50.0..50.0f64, pz in 0.0..5.0f64,
            yaw in -PI..PI,
        ) {
            let s = state_at(Vec3::new(px, py, pz), yaw);
            let p = Vec3::new(x, y, z);
            let back = world_to_body(&body_to_world(&p, &s), &s);
            prop_assert!((back - p).norm() <= 1e-9);
            // yaw-only rotation keeps z exact
            prop_assert_eq!(body_vector_to_world(&p, yaw).z, p.z);
        }

        #[test]
        fn camera_world_round_trip(
            x in -5.0..5.0f64, y in -5.0..5.0f64, z in 0.1..6.0f64,
            yaw in -PI..PI, tx in -0.3..0.3f64,
        ) {
            let mount = FrameTransform::forward_camera(Vec3::new(tx, 0.0, 0.05));
            let s = state_at(Vec3::new(10.0, -3.0, 1.5), yaw);
            let p = Vec3::new(x, y, z);
            let back = world_to_camera(&camera_to_world(&p, &mount, &s), &mount, &s);
            prop_assert!((back - p).norm() <= 1e-9);
        }
    }

    #[test]
    fn intrinsics_project_ray_round_trip() {
        let k = CameraIntrinsics::from_fov(128, 96, 86f64.to_radians(), 57f64.to_radians());
        assert_relative_eq!(k.cx, 64.0);
        let (u, v) = k.project(&Vec3::new(0.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(u, k.cx);
        assert_relative_eq!(v, k.cy);
        // right edge of the image sits at half the horizontal field of view
        let edge = k.ray(128.0, k.cy);
        assert_relative_eq!(edge.x.atan2(edge.z), 43f64.to_radians(), epsilon = 1e-12);
        let p = Vec3::new(0.3, -0.2, 1.7);
        let (u, v) = k.project(&p).unwrap();
        assert_relative_eq!(k.ray(u, v) * p.norm(), p, epsilon = 1e-12);
        assert!(k.project(&Vec3::new(0.0, 0.0, -1.0)).is_none());
    }
}
