//! Named test sites with their artifacts and mission defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::sim::world::{Artifact, CrossSection, Profile, Room, Segment, Solid, TunnelBuilder, TunnelWorld};

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub world: TunnelWorld,
    pub description: &'static str,
    /// Take-off point on the floor.
    pub start: Vec3,
    pub start_yaw: f64,
    /// Exploration budgets for the nominal and fast speed profiles, s.
    pub t_reference: f64,
    pub t_reference_fast: f64,
    pub altitude: f64,
    /// Arc length beyond which the tunnel end region starts, if defined.
    pub end_region: Option<f64>,
    /// Arc-length span of the narrowest section, if any.
    pub narrow_span: Option<[f64; 2]>,
}

/// Summary row for listings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetInfo {
    pub name: String,
    pub description: String,
    pub length: f64,
    pub min_width: f64,
    pub artifacts: usize,
    pub t_reference: f64,
    pub altitude: f64,
}

impl Preset {
    pub fn info(&self) -> PresetInfo {
        PresetInfo {
            name: self.world.name.clone(),
            description: self.description.into(),
            length: self.world.length,
            min_width: self.world.min_width,
            artifacts: self.world.artifacts.len(),
            t_reference: self.t_reference,
            altitude: self.altitude,
        }
    }
}

const NAMES: [&str; 6] = ["straight", "curving", "narrow_inclined", "junction_obstacles", "void", "wide_mine"];

pub fn preset_names() -> &'static [&'static str] {
    &NAMES
}

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "straight" => Ok(straight()),
        "curving" => Ok(curving()),
        "narrow_inclined" => Ok(narrow_inclined()),
        "junction_obstacles" => Ok(junction_obstacles()),
        "void" => Ok(void()),
        "wide_mine" => Ok(wide_mine()),
        _ => Err(Error::UnknownPreset(name.into())),
    }
}

/// Centerline point and heading at global arc length `s`.
pub fn centerline_at(segments: &[Segment], s: f64) -> ([f64; 2], f64) {
    let seg = segments
        .iter()
        .find(|g| s <= g.s_start + g.length)
        .or(segments.last())
        .expect("tunnel has segments");
    seg.point(s - seg.s_start)
}

fn dims(class_id: u8) -> Vec3 {
    match class_id {
        1 => Vec3::new(0.35, 0.2, 0.2),
        2 => Vec3::new(0.15, 0.15, 0.25),
        3 => Vec3::new(0.12, 0.1, 0.1),
        4 => Vec3::new(0.09, 0.09, 0.25),
        5 => Vec3::new(0.14, 0.12, 0.1),
        _ => Vec3::new(0.25, 0.25, 0.08),
    }
}

/// Artifact resting on the floor at arc length `s`, `offset` meters left of the centerline.
fn place(segments: &[Segment], xs: &CrossSection, class_id: u8, s: f64, offset: f64) -> Artifact {
    let (p, h) = centerline_at(segments, s);
    let half = dims(class_id);
    Artifact {
        class_id,
        // rests on the highest floor point under its footprint
        position: Vec3::new(p[0] - offset * h.sin(), p[1] + offset * h.cos(), xs.floor.max_over(s - half.x, s + half.x) + half.z),
        half,
        yaw: h,
    }
}

/// Floor resting artifact at a world position.
fn place_at(class_id: u8, x: f64, y: f64, floor: f64) -> Artifact {
    let half = dims(class_id);
    Artifact {
        class_id,
        position: Vec3::new(x, y, floor + half.z),
        half,
        yaw: 0.0,
    }
}

fn straight() -> Preset {
    let xs = CrossSection::uniform(3.5, 3.0, 0.0);
    let (segs, len) = TunnelBuilder::new([0.0, 0.0], 0.0, xs).straight(40.0).build();
    Preset {
        world: TunnelWorld::assemble("straight", segs, vec![], vec![], vec![], len, 3.5),
        description: "straight 40 m tunnel, 3.5 m wide, 3 m high",
        start: Vec3::new(1.5, 0.0, 0.0),
        start_yaw: 0.0,
        t_reference: 30.0,
        t_reference_fast: 14.0,
        altitude: 1.5,
        end_region: Some(35.0),
        narrow_span: None,
    }
}

fn curving() -> Preset {
    let xs = CrossSection::uniform(3.5, 3.0, 0.0);
    let (segs, len) = TunnelBuilder::new([0.0, 0.0], 0.0, xs.clone())
        .straight(10.0)
        .arc(12.0, 0.6)
        .straight(8.0)
        .arc(10.0, -0.9)
        .straight(8.0)
        .arc(12.0, 0.5)
        .straight(12.8)
        .build();
    let artifacts = vec![
        place(&segs, &xs, 1, 9.0, 1.3),
        place(&segs, &xs, 2, 20.0, -1.4),
        place(&segs, &xs, 3, 31.0, 1.45),
        place(&segs, &xs, 4, 43.0, -1.45),
        place(&segs, &xs, 6, 53.0, 1.35),
    ];
    Preset {
        world: TunnelWorld::assemble("curving", segs, vec![], vec![], artifacts, len, 3.5),
        description: "61 m tunnel with three bends, 3.5 m wide, 3 m high",
        start: Vec3::new(1.5, 0.0, 0.0),
        start_yaw: 0.0,
        t_reference: 62.0,
        t_reference_fast: 28.0,
        altitude: 1.5,
        end_region: Some(len - 6.0),
        narrow_span: None,
    }
}

fn narrow_inclined() -> Preset {
    let width = Profile::new(vec![[0.0, 1.8], [18.0, 1.8], [21.0, 1.6], [25.0, 1.6], [28.0, 1.8]]).expect("sorted knots");
    let xs = CrossSection {
        width,
        height: Profile::constant(2.4),
        floor: Profile::new(vec![[0.0, 0.0], [4.0, 0.0], [40.0, 3.6]]).expect("sorted knots"),
    };
    let (segs, len) = TunnelBuilder::new([0.0, 0.0], 0.0, xs.clone()).straight(42.0).build();
    let artifacts = vec![
        place(&segs, &xs, 3, 11.0, 0.72),
        place(&segs, &xs, 4, 31.0, -0.75),
        place(&segs, &xs, 5, 37.0, 0.7),
    ];
    Preset {
        world: TunnelWorld::assemble("narrow_inclined", segs, vec![], vec![], artifacts, len, 1.6),
        description: "42 m tunnel 1.8 m wide on a 10% grade, narrowing to 1.6 m",
        start: Vec3::new(1.5, 0.0, 0.0),
        start_yaw: 0.0,
        t_reference: 50.0,
        t_reference_fast: 25.0,
        altitude: 1.2,
        end_region: Some(len - 5.0),
        narrow_span: Some([21.0, 25.0]),
    }
}

fn junction_obstacles() -> Preset {
    let xs = CrossSection::uniform(4.0, 3.0, 0.0);
    let (segs, len) = TunnelBuilder::new([0.0, 0.0], 0.0, xs.clone()).straight(42.0).build();
    let mut obstacles = vec![Solid::Cylinder { center: [14.0, 0.4], radius: 0.3, z0: -1.0, z1: 4.0 }];
    for k in 0..4 {
        obstacles.push(Solid::Cylinder { center: [23.0 + k as f64, -1.6], radius: 0.025, z0: -1.0, z1: 4.0 });
    }
    obstacles.push(Solid::Capsule { a: Vec3::new(23.0, -1.6, 1.4), b: Vec3::new(26.0, -1.6, 1.4), radius: 0.025 });
    // side gallery branching right
    let stub = Room { center: [30.0, -4.5], yaw: 0.0, half_length: 1.5, half_width: 3.0, floor: 0.0, height: 3.0 };
    let artifacts = vec![
        place(&segs, &xs, 4, 8.0, 1.7),
        place(&segs, &xs, 6, 34.0, -1.6),
        place(&segs, &xs, 1, 39.0, 1.45),
    ];
    Preset {
        world: TunnelWorld::assemble("junction_obstacles", segs, vec![stub], obstacles, artifacts, len, 4.0),
        description: "42 m tunnel, 4 m wide, with a pillar, a thin-post scaffold and a side gallery",
        start: Vec3::new(1.5, 0.0, 0.0),
        start_yaw: 0.0,
        t_reference: 48.0,
        t_reference_fast: 22.0,
        altitude: 1.5,
        end_region: Some(len - 5.0),
        narrow_span: None,
    }
}

fn void() -> Preset {
    let xs = CrossSection::uniform(3.5, 3.0, 0.0);
    let (segs, len) = TunnelBuilder::new([0.0, 0.0], 0.0, xs).straight(8.0).build_with_open_ends(false, true);
    let room = Room { center: [30.5, 0.0], yaw: 0.0, half_length: 22.5, half_width: 4.0, floor: 0.0, height: 4.0 };
    let artifacts = vec![place_at(1, 16.0, 2.0, 0.0), place_at(2, 27.0, -2.0, 0.0), place_at(5, 38.0, 1.8, 0.0)];
    Preset {
        world: TunnelWorld::assemble("void", segs, vec![room], vec![], artifacts, len, 3.5),
        description: "8 m access tunnel opening into a 45 x 8 x 4 m void",
        start: Vec3::new(1.5, 0.0, 0.0),
        start_yaw: 0.0,
        t_reference: 45.0,
        t_reference_fast: 20.0,
        altitude: 1.5,
        end_region: None,
        narrow_span: None,
    }
}

fn wide_mine() -> Preset {
    let xs = CrossSection::uniform(12.0, 5.0, 0.0);
    let (segs, len) = TunnelBuilder::new([0.0, 0.0], 0.0, xs.clone()).straight(100.0).build();
    let artifacts = vec![place(&segs, &xs, 2, 18.0, 2.5), place(&segs, &xs, 5, 34.0, -2.5), place(&segs, &xs, 1, 50.0, 2.5)];
    Preset {
        world: TunnelWorld::assemble("wide_mine", segs, vec![], vec![], artifacts, len, 12.0),
        description: "100 m mine drift, 12 m wide, 5 m high",
        start: Vec3::new(1.5, 0.0, 0.0),
        start_yaw: 0.0,
        t_reference: 58.0,
        t_reference_fast: 25.0,
        altitude: 1.5,
        end_region: None,
        narrow_span: None,
    }
}
