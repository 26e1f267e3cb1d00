use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use tunnelnav::apf::{repulsive_force, ApfParams};
use tunnelnav::dphr::HeadingRegulator;
use tunnelnav::dynamics::step_plant;
use tunnelnav::harness::{run_mission, RunConfig};
use tunnelnav::nmpc::{InputBounds, Nmpc, NmpcState, NmpcWeights, SolverSettings};
use tunnelnav::sim::{DepthCamera, Lidar};
use tunnelnav::{ControlCommand, PlantParams, Vec3};
use tunnelnav_bench::{hovering_in, rng, scan_cloud};

fn sensors(c: &mut Criterion) {
    let (world, state) = hovering_in("curving");
    let lidar = Lidar::new(Default::default());
    let mut r = rng(1);
    c.bench_function("lidar_scan", |b| b.iter(|| lidar.scan(&world, black_box(&state), &mut r)));
    let camera = DepthCamera::new(Default::default());
    c.bench_function("depth_frame_coarse", |b| b.iter(|| camera.render_coarse(&world, black_box(&state), &mut r)));
    let img = camera.render_coarse(&world, &state, &mut r);
    let mut dphr = HeadingRegulator::new(Default::default());
    c.bench_function("dphr_update", |b| b.iter(|| dphr.update(black_box(&img))));
}

fn avoidance(c: &mut Criterion) {
    let (world, state) = hovering_in("narrow_inclined");
    let cloud = scan_cloud(&world, &state, 2);
    let params = ApfParams::default();
    c.bench_function("repulsive_force", |b| b.iter(|| repulsive_force(black_box(&cloud), &params)));
}

fn control(c: &mut Criterion) {
    let plant = PlantParams::default();
    let mut mpc = Nmpc::new(&plant, SolverSettings::default());
    let (w, bounds) = (NmpcWeights::default(), InputBounds::default());
    let mut x = NmpcState::hover_at(Vec3::zeros());
    x.v.x = 1.0;
    let target = NmpcState::hover_at(Vec3::new(1.0, 0.1, 0.0));
    let hover = ControlCommand::hover(plant.gravity);
    c.bench_function("nmpc_solve_warm", |b| b.iter(|| mpc.solve(black_box(&x), &target, &hover, &w, &bounds)));
    let (_, state) = hovering_in("curving");
    c.bench_function("plant_step", |b| b.iter(|| step_plant(black_box(&state), &hover, 0.01, &plant)));
}

fn mission(c: &mut Criterion) {
    let mut g = c.benchmark_group("mission");
    g.sample_size(10);
    let cfg = RunConfig { t_reference: Some(0.0), ..RunConfig::for_preset("curving", 1) };
    g.bench_function("empty_budget_mission", |b| b.iter(|| run_mission(black_box(&cfg)).unwrap()));
    g.finish();
}

criterion_group!(benches, sensors, avoidance, control, mission);
criterion_main!(benches);
