//! Turns detector bounding boxes into world-frame object reports.
//!
//! Each detection is placed in the world using the depth at its box center,
//! gated on confidence, camera range and metric width, and buffered per
//! class. Once a class has been quiet for a while its buffer is clustered;
//! clusters close to a known object refine it, the rest become new reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dphr::DepthImage;
use crate::dynamics::VehicleState;
use crate::error::{self, Error, Result};
use crate::geometry::{camera_to_world, FrameTransform, Vec3};

pub const CLASS_NAMES: [&str; 6] = ["survivor", "backpack", "drill", "fire_extinguisher", "helmet", "rope"];

pub fn class_name(class_id: u8) -> Option<&'static str> {
    CLASS_NAMES.get((class_id as usize).wrapping_sub(1)).copied()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x_min + 0.5 * self.width, self.y_min + 0.5 * self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u8,
    pub confidence: f64,
    pub bbox: BoundingBox,
    pub frame_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSizePrior {
    pub class_id: u8,
    pub width_min: f64,
    pub width_max: f64,
}

pub fn default_priors() -> Vec<ClassSizePrior> {
    [(1, 0.3, 1.8), (2, 0.25, 0.7), (3, 0.12, 0.45), (4, 0.1, 0.4), (5, 0.15, 0.45), (6, 0.2, 0.8)]
        .into_iter()
        .map(|(class_id, width_min, width_max)| ClassSizePrior {
            class_id,
            width_min,
            width_max,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizerParams {
    pub confidence_threshold: f64,
    /// Radius of the acceptance sphere around the camera, m.
    pub max_range: f64,
    /// Quiet time after a class's last observation before it is processed, s.
    pub quiet_window: f64,
    pub cluster_radius: f64,
    pub merge_radius: f64,
    /// Observations a cluster needs before it is reported as a new object.
    pub min_support: usize,
    pub priors: Vec<ClassSizePrior>,
}

impl Default for LocalizerParams {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.5,
            max_range: 5.0,
            quiet_window: 3.0,
            cluster_radius: 2.0,
            merge_radius: 3.0,
            min_support: 3,
            priors: default_priors(),
        }
    }
}

impl LocalizerParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.confidence_threshold)
            && self.max_range > 0.0
            && self.quiet_window >= 0.0
            && self.cluster_radius > 0.0
            && self.merge_radius > 0.0
            && self.min_support >= 1;
        if !ok {
            return Err(Error::InvalidParameter("invalid localizer parameters".into()));
        }
        for p in &self.priors {
            if !(0.0 < p.width_min && p.width_min < p.width_max) {
                return Err(Error::InvalidParameter(format!("bad width prior for class {}", p.class_id)));
            }
        }
        Ok(())
    }

    pub fn prior(&self, class_id: u8) -> Option<&ClassSizePrior> {
        self.priors.iter().find(|p| p.class_id == class_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizedObject {
    pub class_id: u8,
    pub position: Vec3,
    pub support_count: usize,
    pub first_seen: f64,
    pub last_seen: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localization {
    pub p_camera: Vec3,
    pub p_world: Vec3,
    pub metric_width: f64,
}

/// Median of the valid pixels in the 3×3 window around the box center.
pub fn window_depth(bbox: &BoundingBox, depth: &DepthImage) -> Option<f64> {
    let (u, v) = bbox.center();
    if !(u >= 0.0 && v >= 0.0 && u < depth.width as f64 && v < depth.height as f64) {
        return None;
    }
    let (cx, cy) = (u as isize, v as isize);
    let mut vals = Vec::with_capacity(9);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && y >= 0 && (x as usize) < depth.width && (y as usize) < depth.height {
                let d = depth.at(x as usize, y as usize);
                if d > 0.0 && d < depth.max_range {
                    vals.push(d);
                }
            }
        }
    }
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(f64::total_cmp);
    let m = vals.len();
    Some(if m % 2 == 1 { vals[m / 2] } else { 0.5 * (vals[m / 2 - 1] + vals[m / 2]) })
}

/// Back-projects the box center; depth pixels hold range along the ray.
pub fn localize_detection(
    det: &Detection,
    depth: &DepthImage,
    pose: &VehicleState,
    mount: &FrameTransform,
) -> Option<Localization> {
    let d = window_depth(&det.bbox, depth)?;
    let (u, v) = det.bbox.center();
    let k = &depth.intrinsics;
    let p_camera = k.ray(u, v) * d;
    Some(Localization {
        p_camera,
        p_world: camera_to_world(&p_camera, mount, pose),
        metric_width: det.bbox.width * p_camera.z / k.fx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    LowConfidence,
    OutOfRange,
    WidthOutOfBand,
    NoDepth,
}

/// Confidence, range and width gates. Unknown classes are an error.
pub fn buffer_accept(
    det: &Detection,
    p_camera: &Vec3,
    metric_width: f64,
    params: &LocalizerParams,
) -> Result<Option<Rejection>> {
    let prior = params.prior(det.class_id).ok_or(Error::UnknownClass(det.class_id))?;
    Ok(if det.confidence < params.confidence_threshold {
        Some(Rejection::LowConfidence)
    } else if p_camera.norm() > params.max_range {
        Some(Rejection::OutOfRange)
    } else if metric_width < prior.width_min || metric_width > prior.width_max {
        Some(Rejection::WidthOutOfBand)
    } else {
        None
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub position: Vec3,
    pub time: f64,
}

/// Connected components of the graph linking points closer than `radius`.
pub fn single_linkage(points: &[Vec3], radius: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (points[i] - points[j]).norm() <= radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Mean of the points summed in coordinate order, so the result does not
/// depend on the order the points arrived in.
fn canonical_mean(points: &mut [Vec3]) -> Vec3 {
    points.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z)));
    points.iter().sum::<Vec3>() / points.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectEventKind {
    New,
    Updated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectEvent {
    pub kind: ObjectEventKind,
    pub time: f64,
    pub object: LocalizedObject,
}

/// Clusters one class's buffer and folds the clusters into `known`.
pub fn process_buffer(
    class_id: u8,
    buffer: &[Observation],
    now: f64,
    params: &LocalizerParams,
    known: &mut Vec<LocalizedObject>,
) -> Vec<ObjectEvent> {
    let mut events = Vec::new();
    if buffer.is_empty() {
        return events;
    }
    let pts: Vec<Vec3> = buffer.iter().map(|o| o.position).collect();
    let mut clusters: Vec<(Vec3, usize, f64, f64)> = single_linkage(&pts, params.cluster_radius)
        .into_iter()
        .map(|idx| {
            let mut members: Vec<Vec3> = idx.iter().map(|&i| pts[i]).collect();
            let t0 = idx.iter().map(|&i| buffer[i].time).fold(f64::INFINITY, f64::min);
            let t1 = idx.iter().map(|&i| buffer[i].time).fold(f64::NEG_INFINITY, f64::max);
            (canonical_mean(&mut members), idx.len(), t0, t1)
        })
        .collect();
    // largest support first, ties broken by position, for an order-free result
    clusters.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.x.total_cmp(&b.0.x)).then(a.0.y.total_cmp(&b.0.y)).then(a.0.z.total_cmp(&b.0.z)));

    for (mean, support, t0, t1) in clusters {
        let nearest = known
            .iter()
            .enumerate()
            .filter(|(_, o)| o.class_id == class_id)
            .map(|(i, o)| (i, (o.position - mean).norm()))
            .filter(|(_, d)| *d <= params.merge_radius)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((i, _)) => {
                let o = &mut known[i];
                let total = (o.support_count + support) as f64;
                o.position = (o.position * o.support_count as f64 + mean * support as f64) / total;
                o.support_count += support;
                o.last_seen = o.last_seen.max(t1);
                let updated = *o;
                absorb_neighbours(known, i, params.merge_radius);
                events.push(ObjectEvent {
                    kind: ObjectEventKind::Updated,
                    time: now,
                    object: updated,
                });
            }
            None if support >= params.min_support => {
                let o = LocalizedObject {
                    class_id,
                    position: mean,
                    support_count: support,
                    first_seen: t0,
                    last_seen: t1,
                };
                known.push(o);
                events.push(ObjectEvent {
                    kind: ObjectEventKind::New,
                    time: now,
                    object: o,
                });
            }
            None => {}
        }
    }
    events
}

/// An update can drag an object next to another of its class; fuse them so
/// same-class reports stay more than `radius` apart.
fn absorb_neighbours(known: &mut Vec<LocalizedObject>, mut i: usize, radius: f64) {
    loop {
        let target = known[i];
        let Some(j) = (0..known.len())
            .find(|&j| j != i && known[j].class_id == target.class_id && (known[j].position - target.position).norm() <= radius)
        else {
            return;
        };
        let other = known[j];
        let total = (target.support_count + other.support_count) as f64;
        known[i].position =
            (target.position * target.support_count as f64 + other.position * other.support_count as f64) / total;
        known[i].support_count += other.support_count;
        known[i].first_seen = target.first_seen.min(other.first_seen);
        known[i].last_seen = target.last_seen.max(other.last_seen);
        known.remove(j);
        if j < i {
            i -= 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IngestOutcome {
    Accepted(Localization),
    Rejected(Rejection),
}

#[derive(Debug, Clone, Default)]
pub struct ObjectLocalizer {
    pub params: LocalizerParams,
    buffers: BTreeMap<u8, Vec<Observation>>,
    objects: Vec<LocalizedObject>,
    pub rejected: BTreeMap<String, usize>,
}

impl ObjectLocalizer {
    pub fn new(params: LocalizerParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            ..Self::default()
        })
    }

    pub fn ingest(
        &mut self,
        det: &Detection,
        depth: &DepthImage,
        pose: &VehicleState,
        mount: &FrameTransform,
    ) -> Result<IngestOutcome> {
        if self.params.prior(det.class_id).is_none() {
            log::warn!("detection with unknown class {} dropped", det.class_id);
            return Err(Error::UnknownClass(det.class_id));
        }
        let outcome = match localize_detection(det, depth, pose, mount) {
            None => IngestOutcome::Rejected(Rejection::NoDepth),
            Some(loc) => match buffer_accept(det, &loc.p_camera, loc.metric_width, &self.params)? {
                Some(r) => IngestOutcome::Rejected(r),
                None => {
                    self.buffers.entry(det.class_id).or_default().push(Observation {
                        position: loc.p_world,
                        time: det.frame_time,
                    });
                    IngestOutcome::Accepted(loc)
                }
            },
        };
        if let IngestOutcome::Rejected(r) = outcome {
            *self.rejected.entry(format!("{r:?}")).or_default() += 1;
        }
        Ok(outcome)
    }

    /// Processes every class whose last observation is at least the quiet
    /// window old, or every class when `force` is set.
    pub fn tick(&mut self, now: f64, force: bool) -> Vec<ObjectEvent> {
        let ready: Vec<u8> = self
            .buffers
            .iter()
            .filter(|(_, b)| {
                let last = b.iter().map(|o| o.time).fold(f64::NEG_INFINITY, f64::max);
                !b.is_empty() && (force || now - last >= self.params.quiet_window)
            })
            .map(|(c, _)| *c)
            .collect();
        let mut events = Vec::new();
        for c in ready {
            let buf = self.buffers.remove(&c).unwrap_or_default();
            events.extend(process_buffer(c, &buf, now, &self.params, &mut self.objects));
        }
        events
    }

    pub fn objects(&self) -> &[LocalizedObject] {
        &self.objects
    }

    pub fn buffered(&self) -> usize {
        self.buffers.values().map(Vec::len).sum()
    }

    /// Reported positions led by the zero vector.
    pub fn output_list(&self) -> Vec<Vec3> {
        std::iter::once(Vec3::zeros()).chain(self.objects.iter().map(|o| o.position)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub time: f64,
    pub event: ObjectEventKind,
    pub class_id: u8,
    pub class_name: String,
    pub position: [f64; 3],
    pub support_count: usize,
}

impl From<&ObjectEvent> for ObjectRecord {
    fn from(e: &ObjectEvent) -> Self {
        Self {
            time: e.time,
            event: e.kind,
            class_id: e.object.class_id,
            class_name: class_name(e.object.class_id).unwrap_or("unknown").to_string(),
            position: [e.object.position.x, e.object.position.y, e.object.position.z],
            support_count: e.object.support_count,
        }
    }
}

/// Appends one JSON line per event.
pub fn append_object_log(path: &Path, events: &[ObjectEvent]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| error::io(path, e))?;
    for e in events {
        let line = serde_json::to_string(&ObjectRecord::from(e))?;
        writeln!(f, "{line}").map_err(|e| error::io(path, e))?;
    }
    Ok(())
}
