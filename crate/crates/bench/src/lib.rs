//! Shared fixtures for the benchmarks.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tunnelnav::apf::{ApfParams, PointCloud};
use tunnelnav::sim::{preset, Lidar, TunnelWorld};
use tunnelnav::{Vec3, VehicleState};

/// Vehicle hovering at flight altitude a few meters into `name`.
pub fn hovering_in(name: &str) -> (TunnelWorld, VehicleState) {
    let p = preset(name).expect("known preset");
    let pos = p.start + Vec3::new(4.0, 0.0, p.altitude);
    (p.world, VehicleState::at_rest(pos, p.start_yaw))
}

/// Filtered avoidance cloud from one simulated scan.
pub fn scan_cloud(world: &TunnelWorld, state: &VehicleState, seed: u64) -> PointCloud {
    let lidar = Lidar::new(Default::default());
    let scan = lidar.scan(world, state, &mut ChaCha8Rng::seed_from_u64(seed));
    let apf = ApfParams::default();
    PointCloud::ingest(scan.points, apf.self_radius).thinned(apf.r_f, apf.voxel, apf.max_points)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
