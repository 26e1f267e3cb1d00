//! Deterministic tunnel simulator: world geometry, presets, sensors and
//! synthetic detections.

pub mod detect;
pub mod presets;
pub mod sensors;
pub mod world;

pub use detect::{synth_detections, DetectionModel};
pub use presets::{preset, preset_names, Preset};
pub use sensors::{DepthCamera, Lidar, SensorRig, SingleBeam};
pub use world::{Artifact, CrossSection, Profile, Room, Segment, Solid, TunnelBuilder, TunnelWorld};
