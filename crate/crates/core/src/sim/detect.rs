//! Synthetic object detector standing in for a learned image detector.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::error::{Error, Result};
use crate::geometry::{world_to_camera, Attitude, Vec3};
use crate::localizer::{BoundingBox, ClassSizePrior, Detection};
use crate::sim::sensors::DepthCamera;
use crate::sim::world::TunnelWorld;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionModel {
    /// Probability that a visible artifact is not reported in a frame.
    pub miss_rate: f64,
    pub max_range: f64,
    pub confidence_min: f64,
    pub confidence_max: f64,
    /// Gaussian jitter on each bbox edge, px.
    pub jitter_px: f64,
    /// Per-frame rate of false positives with out-of-band metric width.
    pub fp_out_of_band_rate: f64,
    /// Metric width of out-of-band false positives as a multiple of the class maximum.
    pub fp_width_factor: f64,
    /// Per-frame rate of isolated false positives with plausible width.
    pub fp_in_band_rate: f64,
    /// Artifacts hidden behind other geometry by more than this are not seen, m.
    pub occlusion_tolerance: f64,
}

impl Default for DetectionModel {
    fn default() -> Self {
        Self {
            miss_rate: 0.1,
            max_range: 6.0,
            confidence_min: 0.35,
            confidence_max: 0.99,
            jitter_px: 0.3,
            fp_out_of_band_rate: 0.05,
            fp_width_factor: 3.0,
            fp_in_band_rate: 0.01,
            occlusion_tolerance: 0.05,
        }
    }
}

impl DetectionModel {
    pub fn validate(&self) -> Result<()> {
        let p = |x: f64| (0.0..=1.0).contains(&x);
        let ok = p(self.miss_rate)
            && p(self.fp_out_of_band_rate)
            && p(self.fp_in_band_rate)
            && self.max_range > 0.0
            && self.confidence_min >= 0.0
            && self.confidence_min <= self.confidence_max
            && self.confidence_max <= 1.0
            && self.jitter_px >= 0.0
            && self.fp_width_factor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("invalid detection model".into()))
        }
    }

    /// A perfect detector: no misses, no jitter, no false positives.
    pub fn ideal() -> Self {
        Self {
            miss_rate: 0.0,
            jitter_px: 0.0,
            fp_out_of_band_rate: 0.0,
            fp_in_band_rate: 0.0,
            confidence_min: 0.9,
            confidence_max: 0.9,
            ..Self::default()
        }
    }
}

fn leveled(state: &VehicleState) -> VehicleState {
    VehicleState {
        att: Attitude::level(state.att.yaw),
        ..*state
    }
}

fn confidence<R: Rng>(model: &DetectionModel, rng: &mut R) -> f64 {
    if model.confidence_max > model.confidence_min {
        rng.random_range(model.confidence_min..model.confidence_max)
    } else {
        model.confidence_min
    }
}

/// Projected bbox of an artifact when it is fully inside the image, in range
/// and not occluded.
pub fn visible_bbox(world: &TunnelWorld, state: &VehicleState, camera: &DepthCamera, index: usize, max_range: f64, tol: f64) -> Option<BoundingBox> {
    let art = world.artifacts.get(index)?;
    let pose = leveled(state);
    let p_c = world_to_camera(&art.position, &camera.mount, &pose);
    if p_c.z <= 0.0 || p_c.norm() > max_range {
        return None;
    }
    let (mut u0, mut v0, mut u1, mut v1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in art.corners() {
        let (u, v) = camera.intrinsics.project(&world_to_camera(&c, &camera.mount, &pose))?;
        u0 = u0.min(u);
        v0 = v0.min(v);
        u1 = u1.max(u);
        v1 = v1.max(v);
    }
    let (w, h) = (camera.params.width as f64, camera.params.height as f64);
    if u0 < 0.0 || v0 < 0.0 || u1 > w || v1 > h {
        return None;
    }
    let (uc, vc) = (0.5 * (u0 + u1), 0.5 * (v0 + v1));
    let (o, d) = camera.world_ray(&pose, uc, vc);
    let entry = art.ray_entry(&o, &d)?;
    let hit = world.raycast(&o, &d, entry + 1.0).unwrap_or(f64::INFINITY);
    if hit < entry - tol {
        return None;
    }
    Some(BoundingBox {
        x_min: u0,
        y_min: v0,
        width: u1 - u0,
        height: v1 - v0,
    })
}

/// Detections for one camera frame.
pub fn synth_detections<R: Rng>(
    world: &TunnelWorld,
    state: &VehicleState,
    camera: &DepthCamera,
    model: &DetectionModel,
    priors: &[ClassSizePrior],
    time: f64,
    rng: &mut R,
) -> Vec<Detection> {
    let jitter = Normal::new(0.0, model.jitter_px.max(1e-12)).ok();
    let jit = |rng: &mut R| match (&jitter, model.jitter_px > 0.0) {
        (Some(n), true) => n.sample(rng),
        _ => 0.0,
    };
    let mut out = Vec::new();
    for (i, art) in world.artifacts.iter().enumerate() {
        let Some(b) = visible_bbox(world, state, camera, i, model.max_range, model.occlusion_tolerance) else {
            continue;
        };
        if rng.random::<f64>() < model.miss_rate {
            continue;
        }
        let x0 = b.x_min + jit(rng);
        let y0 = b.y_min + jit(rng);
        let x1 = b.x_min + b.width + jit(rng);
        let y1 = b.y_min + b.height + jit(rng);
        out.push(Detection {
            class_id: art.class_id,
            confidence: confidence(model, rng),
            bbox: BoundingBox {
                x_min: x0.min(x1),
                y_min: y0.min(y1),
                width: (x1 - x0).abs(),
                height: (y1 - y0).abs(),
            },
            frame_time: time,
        });
    }
    if priors.is_empty() {
        return out;
    }
    for (rate, in_band) in [(model.fp_out_of_band_rate, false), (model.fp_in_band_rate, true)] {
        if rng.random::<f64>() >= rate {
            continue;
        }
        let prior = priors[rng.random_range(0..priors.len())];
        let (w, h) = (camera.params.width as f64, camera.params.height as f64);
        let (u, v) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        let (o, d) = camera.world_ray(&leveled(state), u, v);
        let Some(t) = world.raycast(&o, &d, model.max_range) else {
            continue;
        };
        let metric = if in_band {
            rng.random_range(prior.width_min..=prior.width_max)
        } else {
            model.fp_width_factor * prior.width_max
        };
        let z = t * camera.intrinsics.ray(u, v).z;
        let pw = metric * camera.intrinsics.fx / z.max(1e-3);
        let ph = pw.min(h);
        let x0 = u - 0.5 * pw;
        let y0 = v - 0.5 * ph;
        if x0 < 0.0 || x0 + pw > w || y0 < 0.0 || y0 + ph > h {
            continue;
        }
        out.push(Detection {
            class_id: prior.class_id,
            confidence: confidence(model, rng),
            bbox: BoundingBox {
                x_min: x0,
                y_min: y0,
                width: pw,
                height: ph,
            },
            frame_time: time,
        });
    }
    out
}

/// Camera-frame position of an artifact seen from `state`, for test oracles.
pub fn artifact_in_camera(world: &TunnelWorld, state: &VehicleState, camera: &DepthCamera, index: usize) -> Option<Vec3> {
    let art = world.artifacts.get(index)?;
    Some(world_to_camera(&art.position, &camera.mount, &leveled(state)))
}
