//! Signed-distance tunnel worlds.
//!
//! Free space is the union of tunnel segments (a rectangular cross-section
//! swept along a horizontal line or arc) and rooms (yawed boxes); solids
//! (boxes, vertical cylinders, capsules) are carved back out of it. The
//! distance is positive in free space and a lower bound on the true distance
//! to the nearest surface everywhere, which is what sphere tracing needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec3};

/// Piecewise-linear function of tunnel arc length, constant outside its knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub knots: Vec<[f64; 2]>,
}

impl Profile {
    pub fn constant(v: f64) -> Self {
        Self { knots: vec![[0.0, v]] }
    }

    pub fn new(knots: Vec<[f64; 2]>) -> Result<Self> {
        if knots.is_empty() || knots.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return Err(Error::InvalidParameter("profile knots must be strictly increasing".into()));
        }
        Ok(Self { knots })
    }

    pub fn value(&self, s: f64) -> f64 {
        let k = &self.knots;
        if s <= k[0][0] {
            return k[0][1];
        }
        for w in k.windows(2) {
            if s <= w[1][0] {
                let a = (s - w[0][0]) / (w[1][0] - w[0][0]);
                return w[0][1] + a * (w[1][1] - w[0][1]);
            }
        }
        k[k.len() - 1][1]
    }

    pub fn min_over(&self, s0: f64, s1: f64) -> f64 {
        self.knots
            .iter()
            .filter(|k| k[0] > s0 && k[0] < s1)
            .map(|k| k[1])
            .fold(self.value(s0).min(self.value(s1)), f64::min)
    }

    pub fn max_over(&self, s0: f64, s1: f64) -> f64 {
        self.knots
            .iter()
            .filter(|k| k[0] > s0 && k[0] < s1)
            .map(|k| k[1])
            .fold(self.value(s0).max(self.value(s1)), f64::max)
    }

    /// Polyline through the profile over `[s0, s1]` in local coordinates
    /// `(scale * (s - origin), value)`.
    fn local_polyline(&self, s0: f64, s1: f64, origin: f64, scale: f64) -> Vec<[f64; 2]> {
        let mut pts = vec![[scale * (s0 - origin), self.value(s0)]];
        for k in &self.knots {
            if k[0] > s0 && k[0] < s1 {
                pts.push([scale * (k[0] - origin), k[1]]);
            }
        }
        pts.push([scale * (s1 - origin), self.value(s1)]);
        // interior knots on a flat run carry no shape
        let mut out: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
        for (i, p) in pts.iter().enumerate() {
            let flat = i > 0 && i + 1 < pts.len() && pts[i - 1][1] == p[1] && pts[i + 1][1] == p[1];
            if !flat {
                out.push(*p);
            }
        }
        out
    }
}

/// Cross-section along global arc length; height is measured from the floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub width: Profile,
    pub height: Profile,
    pub floor: Profile,
}

impl CrossSection {
    pub fn uniform(width: f64, height: f64, floor: f64) -> Self {
        Self {
            width: Profile::constant(width),
            height: Profile::constant(height),
            floor: Profile::constant(floor),
        }
    }

    fn ceiling(&self) -> Profile {
        let mut s: Vec<f64> = self.height.knots.iter().chain(&self.floor.knots).map(|k| k[0]).collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        Profile {
            knots: s.iter().map(|&x| [x, self.floor.value(x) + self.height.value(x)]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Centerline {
    Line { origin: [f64; 2], heading: f64 },
    /// `turn` is +1 for a left (counter-clockwise) turn and -1 for a right turn.
    Arc { center: [f64; 2], radius: f64, start_angle: f64, turn: f64 },
}

impl Centerline {
    /// Point and heading at local arc length `s`.
    pub fn point(&self, s: f64) -> ([f64; 2], f64) {
        match *self {
            Centerline::Line { origin, heading } => {
                let (sn, c) = heading.sin_cos();
                ([origin[0] + s * c, origin[1] + s * sn], heading)
            }
            Centerline::Arc { center, radius, start_angle, turn } => {
                let a = start_angle + turn * s / radius;
                let p = [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
                (p, wrap_angle(a + turn * std::f64::consts::FRAC_PI_2))
            }
        }
    }
}

/// How a segment end meets its surroundings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum End {
    /// Closed by a flat wall.
    Closed,
    /// Extends this far into neighbouring free space.
    Open(f64),
    /// Continues smoothly into the next segment.
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub centerline: Centerline,
    /// Global arc length at the segment start.
    pub s_start: f64,
    pub length: f64,
    /// Extension past each end, zero where the end is a wall.
    pub ext_start: f64,
    pub ext_end: f64,
    /// Ends shared with the neighbouring piece. Past a joint the piece does
    /// not apply; the neighbour takes over with the same wall position.
    pub joint_start: bool,
    pub joint_end: bool,
    /// Local polylines in `(scaled arc length, value)`.
    half_width: Vec<[f64; 2]>,
    floor: Vec<[f64; 2]>,
    ceiling: Vec<[f64; 2]>,
    /// Arc length is multiplied by this before measuring distances; below
    /// one on arcs so distances are never overestimated on the inner side.
    scale: f64,
    /// `(sin, cos)` of a line's heading or an arc's start angle.
    dir: (f64, f64),
    /// `(sin, cos)` of an arc's end angle.
    end_dir: (f64, f64),
    /// Half width, floor and ceiling of an arc between two joints with a
    /// flat cross-section; no arc length is needed to evaluate it.
    flat_arc: Option<(f64, f64, f64)>,
    half_width_max: f64,
    pub aabb: [f64; 4],
}

fn polyline_distance(poly: &[[f64; 2]], px: f64, py: f64) -> f64 {
    let mut best = f64::INFINITY;
    for w in poly.windows(2) {
        let (ax, ay, bx, by) = (w[0][0], w[0][1], w[1][0], w[1][1]);
        let (ex, ey) = (bx - ax, by - ay);
        let l2 = ex * ex + ey * ey;
        let t = if l2 > 0.0 { (((px - ax) * ex + (py - ay) * ey) / l2).clamp(0.0, 1.0) } else { 0.0 };
        let (dx, dy) = (px - ax - t * ex, py - ay - t * ey);
        best = best.min(dx * dx + dy * dy);
    }
    best.sqrt()
}

fn polyline_value(poly: &[[f64; 2]], x: f64) -> f64 {
    if x <= poly[0][0] {
        return poly[0][1];
    }
    for w in poly.windows(2) {
        if x <= w[1][0] {
            let d = w[1][0] - w[0][0];
            return if d > 0.0 { w[0][1] + (x - w[0][0]) / d * (w[1][1] - w[0][1]) } else { w[1][1] };
        }
    }
    poly[poly.len() - 1][1]
}

/// Signed distance to a graph `y = f(x)`: positive on the side `above`.
fn graph_distance(poly: &[[f64; 2]], x: f64, y: f64, above: bool) -> f64 {
    if poly.len() == 2 && poly[0][1] == poly[1][1] {
        // flat graph over the whole padded span
        let d = y - poly[0][1];
        return if above { d } else { -d };
    }
    let d = polyline_distance(poly, x, y);
    let f = polyline_value(poly, x);
    if (y >= f) == above {
        d
    } else {
        -d
    }
}

impl Segment {
    fn new(centerline: Centerline, s_start: f64, length: f64, start: End, end: End, xs: &CrossSection) -> Self {
        let ext = |e: End| match e {
            End::Open(x) => x,
            _ => 0.0,
        };
        let (ext_start, ext_end) = (ext(start), ext(end));
        let (s0, s1) = (s_start - ext_start, s_start + length + ext_end);
        let pad = 10.0;
        let scale = match centerline {
            Centerline::Line { .. } => 1.0,
            Centerline::Arc { radius, .. } => {
                let hw = 0.5 * xs.width.max_over(s0, s1);
                ((radius - hw) / radius).clamp(0.05, 1.0)
            }
        };
        let half = Profile {
            knots: xs.width.knots.iter().map(|k| [k[0], 0.5 * k[1]]).collect(),
        };
        let ceiling = xs.ceiling();
        let half_width = half.local_polyline(s0 - pad, s1 + pad, s_start, scale);
        let floor = xs.floor.local_polyline(s0 - pad, s1 + pad, s_start, scale);
        let ceiling = ceiling.local_polyline(s0 - pad, s1 + pad, s_start, scale);

        let hw = 0.5 * xs.width.max_over(s0, s1);
        let mut aabb = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let n = 64;
        for i in 0..=n {
            let s = -ext_start + (length + ext_start + ext_end) * i as f64 / n as f64;
            let (p, h) = centerline.point(s);
            for side in [-1.0, 1.0] {
                let q = [p[0] - side * hw * h.sin(), p[1] + side * hw * h.cos()];
                aabb[0] = aabb[0].min(q[0]);
                aabb[1] = aabb[1].min(q[1]);
                aabb[2] = aabb[2].max(q[0]);
                aabb[3] = aabb[3].max(q[1]);
            }
        }
        // chords of an arc can bow outside the sampled points
        let bow = match centerline {
            Centerline::Arc { radius, .. } => {
                let step = (length + ext_start + ext_end) / n as f64 / radius;
                (radius + hw) * (1.0 - (0.5 * step).cos()) + 1e-6
            }
            _ => 1e-6,
        };
        aabb = [aabb[0] - bow, aabb[1] - bow, aabb[2] + bow, aabb[3] + bow];
    let flat_arc = match centerline {
            Centerline::Arc { .. }
                if start == End::Joint
                    && end == End::Joint
                    && half_width.len() == 2
                    && floor.len() == 2
                    && ceiling.len() == 2
                    && half_width[0][1] == half_width[1][1]
                    && floor[0][1] == floor[1][1]
                    && ceiling[0][1] == ceiling[1][1] =>
            {
                Some((half_width[0][1], floor[0][1], ceiling[0][1]))
            }
            _ => None,
        };
        Self {
            centerline,
            s_start,
            length,
            ext_start,
            ext_end,
            joint_start: start == End::Joint,
            joint_end: end == End::Joint,
            floor,
            ceiling,
            scale,
            half_width_max: half_width.iter().map(|k| k[1]).fold(f64::NEG_INFINITY, f64::max),
            end_dir: match centerline {
                Centerline::Arc { start_angle, radius, turn, .. } => (start_angle + turn * length / radius).sin_cos(),
                _ => (0.0, 1.0),
            },
            flat_arc,
            half_width,
            dir: match centerline {
                Centerline::Line { heading, .. } => heading.sin_cos(),
                Centerline::Arc { start_angle, .. } => start_angle.sin_cos(),
            },
            aabb,
        }
    }

    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        self.local_above(x, y, f64::NEG_INFINITY).unwrap_or((0.0, f64::INFINITY))
    }

    /// Local coordinates, or `None` when the lateral distance alone keeps
    /// the free-space value at or below `floor`.
    #[inline]
    fn local_above(&self, x: f64, y: f64, floor: f64) -> Option<(f64, f64)> {
        let (s, c) = self.dir;
        match self.centerline {
            Centerline::Line { origin, .. } => {
                let (dx, dy) = (x - origin[0], y - origin[1]);
                let n = -dx * s + dy * c;
                (self.half_width_max - n.abs() > floor).then_some((dx * c + dy * s, n))
            }
            Centerline::Arc { center, radius, turn, .. } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let r = (dx * dx + dy * dy).sqrt();
                let n = turn * (radius - r);
                if self.half_width_max - n.abs() <= floor {
                    return None;
                }
                // angle relative to the start ray, already in (-pi, pi]
                let a = (-dx * s + dy * c).atan2(dx * c + dy * s) * turn;
                Some((a * radius, n))
            }
        }
    }

    /// Free-space distance, positive inside the segment.
    pub fn sdf(&self, q: &Vec3) -> f64 {
        self.sdf_above(q, f64::NEG_INFINITY)
    }

    /// As [`sdf`](Self::sdf), but free to return negative infinity when the
    /// value cannot exceed `floor`.
    fn sdf_above(&self, q: &Vec3, floor: f64) -> f64 {
        if let (Some((hw, z0, z1)), Centerline::Arc { center, radius, turn, .. }) = (self.flat_arc, self.centerline) {
            let (dx, dy) = (q.x - center[0], q.y - center[1]);
            let lateral = hw - (radius - (dx * dx + dy * dy).sqrt()).abs();
            if lateral <= floor {
                return f64::NEG_INFINITY;
            }
            // outside the angular span unless the point is left of the start
            // ray and right of the end ray (turn-adjusted)
            let (s0, c0) = self.dir;
            let (s1, c1) = self.end_dir;
            if turn * (-dx * s0 + dy * c0) < 0.0 || turn * (-dx * s1 + dy * c1) > 0.0 {
                return f64::NEG_INFINITY;
            }
            return lateral.min(q.z - z0).min(z1 - q.z);
        }
        let Some((s, n)) = self.local_above(q.x, q.y, floor) else {
            return f64::NEG_INFINITY;
        };
        let sigma = s * self.scale;
        if (self.joint_start && s < 0.0) || (self.joint_end && s > self.length) {
            return f64::NEG_INFINITY;
        }
        let mut d = f64::INFINITY;
        if !self.joint_start {
            d = d.min(sigma + self.ext_start * self.scale);
        }
        if !self.joint_end {
            d = d.min((self.length + self.ext_end) * self.scale - sigma);
        }
        d = d.min(graph_distance(&self.half_width, sigma, n.abs(), false));
        d = d.min(graph_distance(&self.floor, sigma, q.z, true));
        d.min(graph_distance(&self.ceiling, sigma, q.z, false))
    }

    /// Global arc length of a point if it lies over the segment's own span.
    pub fn progress(&self, q: &Vec3) -> Option<f64> {
        let (s, n) = self.local(q.x, q.y);
        let hw = polyline_value(&self.half_width, s * self.scale);
        (s >= 0.0 && s <= self.length && n.abs() <= hw).then_some(self.s_start + s)
    }

    pub fn point(&self, s_local: f64) -> ([f64; 2], f64) {
        self.centerline.point(s_local)
    }
}

/// Yawed free-space box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub center: [f64; 2],
    pub yaw: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub floor: f64,
    pub height: f64,
}

impl Room {
    fn local(&self, q: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (q.x - self.center[0], q.y - self.center[1]);
        Vec3::new(dx * c + dy * s, -dx * s + dy * c, q.z - self.floor - 0.5 * self.height)
    }

    pub fn sdf(&self, q: &Vec3) -> f64 {
        -box_sdf(&self.local(q), &Vec3::new(self.half_length, self.half_width, 0.5 * self.height))
    }

    fn aabb(&self) -> [f64; 4] {
        yawed_rect_aabb(self.center, self.yaw, self.half_length, self.half_width)
    }
}

fn yawed_rect_aabb(c: [f64; 2], yaw: f64, hx: f64, hy: f64) -> [f64; 4] {
    let (s, co) = yaw.sin_cos();
    let ex = hx * co.abs() + hy * s.abs();
    let ey = hx * s.abs() + hy * co.abs();
    [c[0] - ex, c[1] - ey, c[0] + ex, c[1] + ey]
}

/// Exact distance to an origin-centered box, positive outside.
fn box_sdf(p: &Vec3, half: &Vec3) -> f64 {
    let d = p.abs() - half;
    let outside = Vec3::new(d.x.max(0.0), d.y.max(0.0), d.z.max(0.0)).norm();
    outside + d.x.max(d.y).max(d.z).min(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Solid {
    Box { center: Vec3, half: Vec3, yaw: f64 },
    /// Vertical cylinder between `z0` and `z1`.
    Cylinder { center: [f64; 2], radius: f64, z0: f64, z1: f64 },
    Capsule { a: Vec3, b: Vec3, radius: f64 },
}

impl Solid {
    /// Distance to the solid, positive outside.
    pub fn sdf(&self, q: &Vec3) -> f64 {
        match *self {
            Solid::Box { center, half, yaw } => {
                let (s, c) = yaw.sin_cos();
                let d = q - center;
                box_sdf(&Vec3::new(d.x * c + d.y * s, -d.x * s + d.y * c, d.z), &half)
            }
            Solid::Cylinder { center, radius, z0, z1 } => {
                let r = ((q.x - center[0]).powi(2) + (q.y - center[1]).powi(2)).sqrt() - radius;
                let h = 0.5 * (z1 - z0);
                let z = (q.z - 0.5 * (z0 + z1)).abs() - h;
                (r.max(0.0).powi(2) + z.max(0.0).powi(2)).sqrt() + r.max(z).min(0.0)
            }
            Solid::Capsule { a, b, radius } => {
                let ab = b - a;
                let t = ((q - a).dot(&ab) / ab.norm_squared().max(1e-12)).clamp(0.0, 1.0);
                (q - a - ab * t).norm() - radius
            }
        }
    }

    /// Cheap lower bound on [`sdf`](Self::sdf).
    fn lower_bound(&self, q: &Vec3) -> f64 {
        match *self {
            Solid::Box { center, half, .. } => (q - center).norm() - half.norm(),
            Solid::Cylinder { center, radius, .. } => ((q.x - center[0]).powi(2) + (q.y - center[1]).powi(2)).sqrt() - radius,
            Solid::Capsule { a, b, radius } => (q - 0.5 * (a + b)).norm() - 0.5 * (b - a).norm() - radius,
        }
    }

    pub fn aabb(&self) -> [f64; 4] {
        match *self {
            Solid::Box { center, half, yaw } => yawed_rect_aabb([center.x, center.y], yaw, half.x, half.y),
            Solid::Cylinder { center, radius, .. } => {
                [center[0] - radius, center[1] - radius, center[0] + radius, center[1] + radius]
            }
            Solid::Capsule { a, b, radius } => [
                a.x.min(b.x) - radius,
                a.y.min(b.y) - radius,
                a.x.max(b.x) + radius,
                a.y.max(b.y) + radius,
            ],
        }
    }

    /// Thin vertical posts, the hard case for a LiDAR.
    pub fn is_thin_post(&self) -> bool {
        matches!(*self, Solid::Cylinder { radius, .. } if radius <= 0.05)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub class_id: u8,
    /// Center of the box.
    pub position: Vec3,
    pub half: Vec3,
    pub yaw: f64,
}

impl Artifact {
    pub fn solid(&self) -> Solid {
        Solid::Box {
            center: self.position,
            half: self.half,
            yaw: self.yaw,
        }
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (s, c) = self.yaw.sin_cos();
        let mut out = [Vec3::zeros(); 8];
        for (i, o) in out.iter_mut().enumerate() {
            let l = Vec3::new(
                if i & 1 == 0 { -self.half.x } else { self.half.x },
                if i & 2 == 0 { -self.half.y } else { self.half.y },
                if i & 4 == 0 { -self.half.z } else { self.half.z },
            );
            *o = self.position + Vec3::new(l.x * c - l.y * s, l.x * s + l.y * c, l.z);
        }
        out
    }

    /// Largest horizontal extent of the box, m.
    pub fn width(&self) -> f64 {
        2.0 * (self.half.x.powi(2) + self.half.y.powi(2)).sqrt()
    }

    /// Ray entry distance into the box (slab test), if hit.
    pub fn ray_entry(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        let (s, c) = self.yaw.sin_cos();
        let rel = o - self.position;
        let lo = Vec3::new(rel.x * c + rel.y * s, -rel.x * s + rel.y * c, rel.z);
        let ld = Vec3::new(d.x * c + d.y * s, -d.x * s + d.y * c, d.z);
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            if ld[a].abs() < 1e-12 {
                if lo[a].abs() > self.half[a] {
                    return None;
                }
            } else {
                let u = (-self.half[a] - lo[a]) / ld[a];
                let v = (self.half[a] - lo[a]) / ld[a];
                t0 = t0.max(u.min(v));
                t1 = t1.min(u.max(v));
            }
        }
        (t1 >= t0.max(0.0)).then_some(t0.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Cell {
    free: Vec<u32>,
    solids: Vec<u32>,
    /// Lower bound on the distance to any solid not listed.
    solid_bound: f64,
}

const CELL: f64 = 1.0;
const FREE_MARGIN: f64 = 1.5;
const SOLID_MARGIN: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
struct Grid {
    origin: [f64; 2],
    nx: usize,
    ny: usize,
    cells: Vec<Cell>,
}

fn rect_distance(a: [f64; 4], b: [f64; 4]) -> f64 {
    let dx = (b[0] - a[2]).max(a[0] - b[2]).max(0.0);
    let dy = (b[1] - a[3]).max(a[1] - b[3]).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

fn point_rect_distance(x: f64, y: f64, r: [f64; 4]) -> f64 {
    let dx = (r[0] - x).max(x - r[2]).max(0.0);
    let dy = (r[1] - y).max(y - r[3]).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

/// A named test site: geometry, artifacts and the mission defaults tuned for it.
#[derive(Debug, Clone, PartialEq)]
pub struct TunnelWorld {
    pub name: String,
    pub segments: Vec<Segment>,
    pub rooms: Vec<Room>,
    pub obstacles: Vec<Solid>,
    pub artifacts: Vec<Artifact>,
    /// Without any bounding free space the world is open in every direction.
    pub open: bool,
    /// Total centerline length of the main tunnel, m.
    pub length: f64,
    pub min_width: f64,
    solids: Vec<Solid>,
    grid: Grid,
    bounds: [f64; 4],
}

impl TunnelWorld {
    pub fn assemble(
        name: &str,
        segments: Vec<Segment>,
        rooms: Vec<Room>,
        obstacles: Vec<Solid>,
        artifacts: Vec<Artifact>,
        length: f64,
        min_width: f64,
    ) -> Self {
        let open = segments.is_empty() && rooms.is_empty();
        let mut solids = obstacles.clone();
        solids.extend(artifacts.iter().map(Artifact::solid));
        let free_boxes: Vec<[f64; 4]> = segments.iter().map(|s| s.aabb).chain(rooms.iter().map(Room::aabb)).collect();
        let solid_boxes: Vec<[f64; 4]> = solids.iter().map(Solid::aabb).collect();
        let mut bounds = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for b in free_boxes.iter().chain(&solid_boxes) {
            bounds = [bounds[0].min(b[0]), bounds[1].min(b[1]), bounds[2].max(b[2]), bounds[3].max(b[3])];
        }
        if !bounds[0].is_finite() {
            bounds = [-1.0, -1.0, 1.0, 1.0];
        }
        let m = FREE_MARGIN.max(SOLID_MARGIN);
        let bounds = [bounds[0] - m, bounds[1] - m, bounds[2] + m, bounds[3] + m];
        let origin = [bounds[0], bounds[1]];
        let nx = ((bounds[2] - bounds[0]) / CELL).ceil() as usize;
        let ny = ((bounds[3] - bounds[1]) / CELL).ceil() as usize;
        let mut cells = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x0 = origin[0] + i as f64 * CELL;
                let y0 = origin[1] + j as f64 * CELL;
                let rect = [x0, y0, x0 + CELL, y0 + CELL];
                let free = free_boxes
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| rect_distance(rect, **b) <= FREE_MARGIN)
                    .map(|(k, _)| k as u32)
                    .collect();
                let mut listed = Vec::new();
                let mut bound = f64::INFINITY;
                for (k, b) in solid_boxes.iter().enumerate() {
                    let d = rect_distance(rect, *b);
                    if d <= SOLID_MARGIN {
                        listed.push(k as u32);
                    } else {
                        bound = bound.min(d);
                    }
                }
                cells.push(Cell {
                    free,
                    solids: listed,
                    solid_bound: bound,
                });
            }
        }
        Self {
            name: name.to_string(),
            segments,
            rooms,
            obstacles,
            artifacts,
            open,
            length,
            min_width,
            solids,
            grid: Grid { origin, nx, ny, cells },
            bounds,
        }
    }

    fn free_sdf(&self, k: u32, q: &Vec3) -> f64 {
        self.free_sdf_above(k, q, f64::NEG_INFINITY)
    }

    fn free_sdf_above(&self, k: u32, q: &Vec3, floor: f64) -> f64 {
        let k = k as usize;
        if k < self.segments.len() {
            self.segments[k].sdf_above(q, floor)
        } else {
            self.rooms[k - self.segments.len()].sdf(q)
        }
    }

    /// Signed distance to the nearest surface, positive in free space.
    pub fn sdf(&self, q: &Vec3) -> f64 {
        let g = &self.grid;
        let fx = (q.x - g.origin[0]) / CELL;
        let fy = (q.y - g.origin[1]) / CELL;
        if fx < 0.0 || fy < 0.0 || fx >= g.nx as f64 || fy >= g.ny as f64 {
            // everything lies at least a margin inside the grid
            let d = point_rect_distance(q.x, q.y, self.bounds) + SOLID_MARGIN.min(FREE_MARGIN);
            return if self.open { d } else { -d };
        }
        let cell = &g.cells[fy as usize * g.nx + fx as usize];
        let mut free = if self.open {
            f64::INFINITY
        } else {
            cell.free.iter().fold(-FREE_MARGIN, |m, &k| m.max(self.free_sdf_above(k, q, m)))
        };
        free = free.min(cell.solid_bound);
        for &k in &cell.solids {
            let solid = &self.solids[k as usize];
            if solid.lower_bound(q) < free {
                free = free.min(solid.sdf(q));
            }
        }
        free
    }

    /// Exhaustive evaluation without the grid, for validation.
    pub fn sdf_reference(&self, q: &Vec3) -> f64 {
        let mut free = if self.open {
            f64::INFINITY
        } else {
            (0..(self.segments.len() + self.rooms.len()) as u32).fold(f64::NEG_INFINITY, |m, k| m.max(self.free_sdf(k, q)))
        };
        for s in &self.solids {
            free = free.min(s.sdf(q));
        }
        free
    }

    /// Distance from the vehicle center to the nearest surface.
    pub fn clearance(&self, p: &Vec3) -> f64 {
        self.sdf(p)
    }

    /// Sphere-traced hit distance along a unit direction.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<f64> {
        let mut t = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for _ in 0..160 {
            let d = self.sdf(&(origin + dir * t));
            let eps = (2e-4 * t).max(1e-3);
            if d < eps {
                return Some(self.refine(origin, dir, t, d, prev).max(0.0));
            }
            prev = Some((t, d));
            t += d;
            if t > max_range {
                return None;
            }
        }
        // marching stalled on a grazing ray; accept the current point
        (t <= max_range).then_some(t)
    }

    /// Secant steps on the distance along the ray close the gap a grazing
    /// ray leaves when marching stops.
    fn refine(&self, origin: &Vec3, dir: &Vec3, mut t: f64, mut d: f64, prev: Option<(f64, f64)>) -> f64 {
        let Some((mut tp, mut dp)) = prev else {
            return t;
        };
        for _ in 0..3 {
            let slope = dp - d;
            if slope <= 1e-9 || d.abs() < 1e-7 {
                break;
            }
            let tn = t + d * (t - tp) / slope;
            if !(tn > tp && tn < t + 50.0 * d.abs() + 1e-6) {
                break;
            }
            // keep a step only if it moved closer to the surface
            let dn = self.sdf(&(origin + dir * tn));
            if dn.abs() >= d.abs() {
                break;
            }
            (tp, dp) = (t, d);
            (t, d) = (tn, dn);
        }
        t
    }

    /// Largest centerline arc length over the main tunnel segments at `p`.
    pub fn progress(&self, p: &Vec3) -> Option<f64> {
        self.segments.iter().filter_map(|s| s.progress(p)).reduce(f64::max)
    }

    pub fn solids(&self) -> &[Solid] {
        &self.solids
    }

    /// Left and right wall polylines of every segment plus room outlines, for plotting.
    pub fn outline(&self, step: f64) -> Vec<Vec<[f64; 2]>> {
        let mut out = Vec::new();
        for seg in &self.segments {
            let n = ((seg.length / step).ceil() as usize).max(1);
            for side in [-1.0, 1.0] {
                let mut line = Vec::with_capacity(n + 1);
                for i in 0..=n {
                    let s = seg.length * i as f64 / n as f64;
                    let (p, h) = seg.point(s);
                    let hw = polyline_value(&seg.half_width, s * seg.scale);
                    line.push([p[0] - side * hw * h.sin(), p[1] + side * hw * h.cos()]);
                }
                out.push(line);
            }
        }
        for r in &self.rooms {
            let (s, c) = r.yaw.sin_cos();
            let corner = |a: f64, b: f64| {
                [
                    r.center[0] + a * r.half_length * c - b * r.half_width * s,
                    r.center[1] + a * r.half_length * s + b * r.half_width * c,
                ]
            };
            out.push(vec![corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0), corner(-1.0, -1.0)]);
        }
        out
    }
}

/// Chains line and arc segments into one tunnel with a shared cross-section.
#[derive(Debug, Clone)]
pub struct TunnelBuilder {
    xs: CrossSection,
    overlap: f64,
    pieces: Vec<(Centerline, f64, f64)>,
    pos: [f64; 2],
    heading: f64,
    s: f64,
}

impl TunnelBuilder {
    pub fn new(start: [f64; 2], heading: f64, xs: CrossSection) -> Self {
        Self {
            xs,
            overlap: 3.0,
            pieces: Vec::new(),
            pos: start,
            heading,
            s: 0.0,
        }
    }

    pub fn straight(mut self, length: f64) -> Self {
        self.pieces.push((Centerline::Line { origin: self.pos, heading: self.heading }, self.s, length));
        let (p, _) = Centerline::Line { origin: self.pos, heading: self.heading }.point(length);
        self.pos = p;
        self.s += length;
        self
    }

    /// Arc of `radius` turning by `angle` radians (positive to the left).
    pub fn arc(mut self, radius: f64, angle: f64) -> Self {
        let turn = angle.signum();
        let normal = self.heading + turn * std::f64::consts::FRAC_PI_2;
        let center = [self.pos[0] + radius * normal.cos(), self.pos[1] + radius * normal.sin()];
        let start_angle = wrap_angle(normal + std::f64::consts::PI);
        let c = Centerline::Arc { center, radius, start_angle, turn };
        let length = radius * angle.abs();
        self.pieces.push((c, self.s, length));
        let (p, h) = c.point(length);
        self.pos = p;
        self.heading = h;
        self.s += length;
        self
    }

    pub fn end(&self) -> ([f64; 2], f64, f64) {
        (self.pos, self.heading, self.s)
    }

    /// Segments with both ends closed.
    pub fn build(self) -> (Vec<Segment>, f64) {
        let n = self.pieces.len();
        let segs = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, &(c, s0, len))| {
                let e0 = if i == 0 { End::Closed } else { End::Joint };
                let e1 = if i + 1 == n { End::Closed } else { End::Joint };
                Segment::new(c, s0, len, e0, e1, &self.xs)
            })
            .collect();
        (segs, self.s)
    }

    /// Like [`build`](Self::build) but leaves the chosen ends open into
    /// neighbouring free space by `overlap` meters.
    pub fn build_with_open_ends(self, open_start: bool, open_end: bool) -> (Vec<Segment>, f64) {
        let n = self.pieces.len();
        let segs = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, &(c, s0, len))| {
                let end = |first: bool, open: bool| match (first, open) {
                    (false, _) => End::Joint,
                    (true, true) => End::Open(self.overlap),
                    (true, false) => End::Closed,
                };
                Segment::new(c, s0, len, end(i == 0, open_start), end(i + 1 == n, open_end), &self.xs)
            })
            .collect();
        (segs, self.s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight(width: f64, height: f64) -> TunnelWorld {
        let (segs, len) = TunnelBuilder::new([0.0, 0.0], 0.0, CrossSection::uniform(width, height, 0.0)).straight(20.0).build();
        TunnelWorld::assemble("t", segs, vec![], vec![], vec![], len, width)
    }

    #[test]
    fn clearance_in_a_box_tunnel() {
        let w = straight(3.5, 2.0);
        assert_relative_eq!(w.clearance(&Vec3::new(10.0, 0.0, 1.5)), 0.5, epsilon = 1e-12);
        assert_relative_eq!(w.clearance(&Vec3::new(10.0, 1.75, 1.0)), 0.0, epsilon = 1e-12);
        assert_relative_eq!(w.clearance(&Vec3::new(10.0, 1.0, 1.0)), 0.75, epsilon = 1e-12);
        assert!(w.clearance(&Vec3::new(10.0, 2.5, 1.0)) < 0.0);
        assert_relative_eq!(w.clearance(&Vec3::new(0.4, 0.0, 1.0)), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn profile_interpolation() {
        let p = Profile::new(vec![[0.0, 1.0], [10.0, 2.0]]).unwrap();
        assert_eq!(p.value(-1.0), 1.0);
        assert_eq!(p.value(5.0), 1.5);
        assert_eq!(p.value(20.0), 2.0);
        assert!(Profile::new(vec![[1.0, 0.0], [1.0, 1.0]]).is_err());
    }

    #[test]
    fn arcs_join_smoothly() {
        let b = TunnelBuilder::new([0.0, 0.0], 0.0, CrossSection::uniform(3.0, 3.0, 0.0))
            .straight(5.0)
            .arc(10.0, std::f64::consts::FRAC_PI_2)
            .straight(5.0);
        let (end, heading, len) = b.end();
        assert_relative_eq!(heading, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(end[0], 15.0, epsilon = 1e-9);
        assert_relative_eq!(end[1], 15.0, epsilon = 1e-9);
        let (segs, _) = b.build();
        let w = TunnelWorld::assemble("t", segs, vec![], vec![], vec![], len, 3.0);
        // centerline mid-arc is 1.5 m from both walls
        let a = std::f64::consts::FRAC_PI_4;
        let mid = Vec3::new(5.0 + 10.0 * a.sin(), 10.0 - 10.0 * a.cos(), 1.0);
        assert_relative_eq!(w.clearance(&mid), 1.0, epsilon = 1e-9);
        assert!(w.progress(&mid).unwrap() > 5.0);
        // across the straight-arc joint the free space is continuous
        for i in 0..=20 {
            let x = 4.0 + 0.1 * i as f64;
            assert!(w.clearance(&Vec3::new(x, 0.0, 1.5)) > 1.4);
        }
    }

    #[test]
    fn grid_matches_exhaustive_evaluation() {
        let (segs, len) = TunnelBuilder::new([0.0, 0.0], 0.3, CrossSection::uniform(3.5, 3.0, 0.0))
            .straight(8.0)
            .arc(12.0, -0.8)
            .straight(6.0)
            .build();
        let obstacles = vec![
            Solid::Cylinder { center: [4.0, 1.5], radius: 0.3, z0: -1.0, z1: 4.0 },
            Solid::Capsule { a: Vec3::new(6.0, 2.0, 2.0), b: Vec3::new(7.0, 3.0, 2.0), radius: 0.03 },
        ];
        let w = TunnelWorld::assemble("t", segs, vec![], obstacles, vec![], len, 3.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5000 {
            let q = Vec3::new(rng.random_range(-3.0..25.0), rng.random_range(-12.0..6.0), rng.random_range(-1.0..4.0));
            let (a, b) = (w.sdf(&q), w.sdf_reference(&q));
            if b > 0.0 {
                assert!((a - b).abs() < 1e-12 || a <= b, "{q:?}: {a} vs {b}");
                assert!(a > 0.0);
            }
            if b > 0.0 && b < FREE_MARGIN.min(SOLID_MARGIN) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    /// Minimum distance to densely sampled surface points of a tunnel with a pillar.
    #[test]
    fn clearance_matches_sampled_surfaces() {
        let (segs, len) = TunnelBuilder::new([0.0, 0.0], 0.0, CrossSection::uniform(3.5, 3.0, 0.0)).straight(10.0).build();
        let pillar = Solid::Cylinder { center: [5.0, 0.5], radius: 0.3, z0: 0.0, z1: 3.0 };
        let w = TunnelWorld::assemble("t", segs, vec![], vec![pillar], vec![], len, 3.5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        while checked < 40 {
            let q = Vec3::new(rng.random_range(3.0..7.0), rng.random_range(-1.5..1.5), rng.random_range(0.8..2.2));
            if pillar.sdf(&q) < 0.0 {
                continue;
            }
            checked += 1;
            let mut best = f64::INFINITY;
            for i in 0..=2000 {
                let x = i as f64 * 0.005;
                for p in [
                    Vec3::new(x, -1.75, q.z),
                    Vec3::new(x, 1.75, q.z),
                    Vec3::new(x, q.y, 0.0),
                    Vec3::new(x, q.y, 3.0),
                ] {
                    best = best.min((p - q).norm());
                }
            }
            for k in 0..7200 {
                let a = k as f64 * std::f64::consts::TAU / 7200.0;
                best = best.min((Vec3::new(5.0 + 0.3 * a.cos(), 0.5 + 0.3 * a.sin(), q.z) - q).norm());
            }
            assert!((w.clearance(&q) - best).abs() < 1e-3, "{q:?}: {} vs {best}", w.clearance(&q));
        }
    }

    #[test]
    fn raycast_box_tunnel() {
        let w = straight(3.5, 3.0);
        let o = Vec3::new(10.0, 0.0, 1.5);
        assert_relative_eq!(w.raycast(&o, &Vec3::new(0.0, 1.0, 0.0), 100.0).unwrap(), 1.75, epsilon = 2e-3);
        assert_relative_eq!(w.raycast(&o, &Vec3::new(0.0, 0.0, -1.0), 100.0).unwrap(), 1.5, epsilon = 2e-3);
        let d = Vec3::new(1.0, 0.0, 0.2).normalize();
        let t = w.raycast(&o, &d, 100.0).unwrap();
        assert_relative_eq!(t, 1.5 / d.z, epsilon = 5e-3);
        assert!(w.raycast(&o, &Vec3::new(1.0, 0.0, 0.0), 5.0).is_none());
    }

    #[test]
    fn open_world_has_no_hits() {
        let w = TunnelWorld::assemble("void", vec![], vec![], vec![], vec![], 0.0, 0.0);
        assert!(w.raycast(&Vec3::zeros(), &Vec3::new(0.3, 0.4, 0.1).normalize(), 100.0).is_none());
    }

    #[test]
    fn artifact_ray_entry() {
        let a = Artifact { class_id: 2, position: Vec3::new(3.0, 0.0, 0.2), half: Vec3::new(0.2, 0.15, 0.2), yaw: 0.0 };
        assert_relative_eq!(a.ray_entry(&Vec3::new(0.0, 0.0, 0.2), &Vec3::new(1.0, 0.0, 0.0)).unwrap(), 2.8, epsilon = 1e-12);
        assert!(a.ray_entry(&Vec3::new(0.0, 0.0, 0.2), &Vec3::new(-1.0, 0.0, 0.0)).is_none());
        assert_relative_eq!(a.width(), 0.5, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn sdf_is_one_lipschitz(x in -2.0..22.0f64, y in -4.0..4.0f64, z in -1.0..4.0f64,
                                dx in -0.3..0.3f64, dy in -0.3..0.3f64, dz in -0.3..0.3f64) {
            let w = straight(3.5, 3.0);
            let a = Vec3::new(x, y, z);
            let b = a + Vec3::new(dx, dy, dz);
            if w.sdf(&a) > 0.0 && w.sdf(&b) > 0.0 {
                prop_assert!((w.sdf(&a) - w.sdf(&b)).abs() <= (b - a).norm() + 1e-12);
            }
        }
    }
}
