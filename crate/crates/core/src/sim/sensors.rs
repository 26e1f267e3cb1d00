//! Ray-traced sensor models.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dphr::DepthImage;
use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::geometry::{yaw_rotation, CameraIntrinsics, FrameTransform, Vec3};
use crate::sim::world::TunnelWorld;

fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarParams {
    pub rings: usize,
    /// Full vertical field of view, degrees, centered on the horizon.
    pub vertical_fov_deg: f64,
    pub azimuth_step_deg: f64,
    pub max_range: f64,
    /// Rays are marched at most this far; returns beyond it carry no
    /// avoidance force and are not needed by the closed loop.
    pub trace_range: f64,
    pub sigma: f64,
    /// Dust returns injected per scan.
    pub dust_points: usize,
    pub dust_probability: f64,
    pub dust_min_range: f64,
    pub dust_max_range: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            rings: 16,
            vertical_fov_deg: 30.0,
            azimuth_step_deg: 0.5,
            max_range: 100.0,
            trace_range: 5.5,
            sigma: 0.02,
            dust_points: 2,
            dust_probability: 1.0,
            dust_min_range: 0.4,
            dust_max_range: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthParams {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub max_range: f64,
    pub sigma: f64,
    /// Heading-regulation frames trace one ray per `stride`×`stride` block.
    pub dphr_stride: usize,
    /// Camera position in the body frame, m.
    pub mount_offset: [f64; 3],
}

impl Default for DepthParams {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            hfov_deg: 86.0,
            vfov_deg: 57.0,
            max_range: 6.0,
            sigma: 0.03,
            dphr_stride: 8,
            mount_offset: [0.1, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamParams {
    pub max_range: f64,
    pub sigma: f64,
}

impl Default for BeamParams {
    fn default() -> Self {
        Self {
            max_range: 12.0,
            sigma: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorRig {
    pub lidar: LidarParams,
    pub depth: DepthParams,
    pub beam: BeamParams,
}

impl SensorRig {
    pub fn validate(&self) -> Result<()> {
        let l = &self.lidar;
        let d = &self.depth;
        let ok = l.rings >= 1
            && l.azimuth_step_deg > 0.0
            && l.trace_range > 0.0
            && l.max_range >= l.trace_range
            && l.sigma >= 0.0
            && (0.0..=1.0).contains(&l.dust_probability)
            && d.width > 0
            && d.height > 0
            && d.dphr_stride >= 1
            && d.width % d.dphr_stride == 0
            && d.height % d.dphr_stride == 0
            && d.hfov_deg > 0.0
            && d.hfov_deg < 180.0
            && d.vfov_deg > 0.0
            && d.vfov_deg < 180.0
            && d.max_range > 0.0
            && d.sigma >= 0.0
            && self.beam.max_range > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("invalid sensor rig".into()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Lidar {
    pub params: LidarParams,
    /// Ray directions in the airframe.
    dirs: Vec<Vec3>,
}

/// One scan in the body frame (vehicle-centered, yaw-aligned).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LidarScan {
    pub points: Vec<Vec3>,
    /// Index where injected dust returns start.
    pub dust_start: usize,
}

impl Lidar {
    pub fn new(params: LidarParams) -> Self {
        let n_az = (360.0 / params.azimuth_step_deg).round() as usize;
        let mut dirs = Vec::with_capacity(params.rings * n_az);
        for r in 0..params.rings {
            let elev = if params.rings == 1 {
                0.0
            } else {
                (-0.5 * params.vertical_fov_deg + params.vertical_fov_deg * r as f64 / (params.rings - 1) as f64).to_radians()
            };
            for a in 0..n_az {
                let az = (a as f64 * params.azimuth_step_deg).to_radians();
                dirs.push(Vec3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()));
            }
        }
        Self { params, dirs }
    }

    pub fn ray_count(&self) -> usize {
        self.dirs.len()
    }

    pub fn scan<R: Rng>(&self, world: &TunnelWorld, state: &VehicleState, rng: &mut R) -> LidarScan {
        let rot = state.att.rotation();
        let unyaw = yaw_rotation(state.att.yaw).transpose();
        let range = self.params.trace_range.min(self.params.max_range);
        let mut points = Vec::new();
        for d in &self.dirs {
            let dw = rot * d;
            if let Some(t) = world.raycast(&state.p, &dw, range) {
                let r = (t + gaussian(rng, self.params.sigma)).max(0.0);
                points.push(unyaw * (dw * r));
            }
        }
        let dust_start = points.len();
        if self.params.dust_points > 0 && rng.random::<f64>() < self.params.dust_probability {
            for _ in 0..self.params.dust_points {
                let az = rng.random_range(0.0..std::f64::consts::TAU);
                let el = rng.random_range(-0.26..0.26f64);
                let r = rng.random_range(self.params.dust_min_range..self.params.dust_max_range);
                points.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * r);
            }
        }
        LidarScan { points, dust_start }
    }
}

#[derive(Debug, Clone)]
pub struct DepthCamera {
    pub params: DepthParams,
    pub intrinsics: CameraIntrinsics,
    pub mount: FrameTransform,
    /// Body-frame ray directions of the heading-regulation raster.
    coarse_dirs: Vec<Vec3>,
}

impl DepthCamera {
    pub fn new(params: DepthParams) -> Self {
        let intrinsics = CameraIntrinsics::from_fov(
            params.width,
            params.height,
            params.hfov_deg.to_radians(),
            params.vfov_deg.to_radians(),
        );
        let o = params.mount_offset;
        let mount = FrameTransform::forward_camera(Vec3::new(o[0], o[1], o[2]));
        let f = params.dphr_stride.max(1);
        let (w, h) = (params.width / f, params.height / f);
        let mut coarse_dirs = Vec::with_capacity(w * h);
        for j in 0..h {
            for i in 0..w {
                let u = (i as f64 + 0.5) * f as f64;
                let v = (j as f64 + 0.5) * f as f64;
                coarse_dirs.push(mount.rotation * intrinsics.ray(u, v));
            }
        }
        Self {
            params,
            intrinsics,
            mount,
            coarse_dirs,
        }
    }

    /// The image is rendered from a leveled, yaw-only camera pose; the
    /// gimbal-free airframe tilt is compensated before use.
    fn origin(&self, state: &VehicleState) -> (Vec3, crate::geometry::Mat3) {
        let yaw = yaw_rotation(state.att.yaw);
        (state.p + yaw * self.mount.translation, yaw)
    }

    fn sample<R: Rng>(&self, world: &TunnelWorld, o: &Vec3, dir_w: &Vec3, rng: &mut R) -> f64 {
        let m = self.params.max_range;
        match world.raycast(o, dir_w, m) {
            Some(t) => (t + gaussian(rng, self.params.sigma)).clamp(0.0, m),
            None => m,
        }
    }

    /// Heading-regulation frame: one ray per block, with matching intrinsics.
    pub fn render_coarse<R: Rng>(&self, world: &TunnelWorld, state: &VehicleState, rng: &mut R) -> DepthImage {
        let f = self.params.dphr_stride.max(1);
        let (w, h) = (self.params.width / f, self.params.height / f);
        let (o, yaw) = self.origin(state);
        let depth = self.coarse_dirs.iter().map(|d| self.sample(world, &o, &(yaw * d), rng)).collect();
        DepthImage {
            width: w,
            height: h,
            depth,
            intrinsics: self.intrinsics.downscaled(f as f64),
            max_range: self.params.max_range,
        }
    }

    /// Full native-resolution frame.
    pub fn render<R: Rng>(&self, world: &TunnelWorld, state: &VehicleState, rng: &mut R) -> DepthImage {
        let (w, h) = (self.params.width, self.params.height);
        let (o, yaw) = self.origin(state);
        let rot = yaw * self.mount.rotation;
        let mut depth = Vec::with_capacity(w * h);
        for j in 0..h {
            for i in 0..w {
                let d = rot * self.intrinsics.ray(i as f64 + 0.5, j as f64 + 0.5);
                depth.push(self.sample(world, &o, &d, rng));
            }
        }
        DepthImage {
            width: w,
            height: h,
            depth,
            intrinsics: self.intrinsics,
            max_range: self.params.max_range,
        }
    }

    /// Native-resolution frame where only the 3×3 windows around the given
    /// image points are traced; every other pixel reads as no return.
    pub fn render_windows<R: Rng>(
        &self,
        world: &TunnelWorld,
        state: &VehicleState,
        centers: &[(f64, f64)],
        rng: &mut R,
    ) -> DepthImage {
        let (w, h) = (self.params.width, self.params.height);
        let mut depth = vec![self.params.max_range; w * h];
        let mut done = vec![false; w * h];
        let (o, yaw) = self.origin(state);
        let rot = yaw * self.mount.rotation;
        for &(u, v) in centers {
            let (cx, cy) = (u.floor() as i64, v.floor() as i64);
            for y in cy - 1..=cy + 1 {
                for x in cx - 1..=cx + 1 {
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    }
                    let k = y as usize * w + x as usize;
                    if !done[k] {
                        let d = rot * self.intrinsics.ray(x as f64 + 0.5, y as f64 + 0.5);
                        depth[k] = self.sample(world, &o, &d, rng);
                        done[k] = true;
                    }
                }
            }
        }
        DepthImage {
            width: w,
            height: h,
            depth,
            intrinsics: self.intrinsics,
            max_range: self.params.max_range,
        }
    }

    /// Camera-frame ray through an image point, rotated into the world.
    pub fn world_ray(&self, state: &VehicleState, u: f64, v: f64) -> (Vec3, Vec3) {
        let (o, yaw) = self.origin(state);
        (o, yaw * self.mount.rotation * self.intrinsics.ray(u, v))
    }
}

/// Downward range finder fixed to the airframe.
#[derive(Debug, Clone, Copy)]
pub struct SingleBeam {
    pub params: BeamParams,
}

impl SingleBeam {
    pub fn new(params: BeamParams) -> Self {
        Self { params }
    }

    pub fn range<R: Rng>(&self, world: &TunnelWorld, state: &VehicleState, rng: &mut R) -> Option<f64> {
        let dir = state.att.rotation() * Vec3::new(0.0, 0.0, -1.0);
        world
            .raycast(&state.p, &dir, self.params.max_range)
            .map(|t| (t + gaussian(rng, self.params.sigma)).max(1e-3))
    }
}
