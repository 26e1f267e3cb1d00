//! Reactive MAV autonomy for subterranean tunnel exploration, with a
//! deterministic lockstep tunnel simulator to fly it against.
//!
//! The stack: [`nmpc`] tracks position references produced by the
//! [`apf`] potential field, [`dphr`] steers the heading toward the deepest
//! region of the depth image, [`localizer`] turns detections into world-frame
//! objects, and [`mission`] sequences take-off, exploration, breadcrumb
//! return and landing. [`sim`] synthesizes sensors from a parametric tunnel
//! world and [`harness`] wires everything into the closed loop.

pub mod apf;
pub mod dphr;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod localizer;
pub mod mission;
pub mod nmpc;
pub mod sim;

pub use dynamics::{ControlCommand, PlantParams, VehicleState};
pub use error::{Error, Result};
pub use geometry::{Attitude, FrameTransform, Vec3};
