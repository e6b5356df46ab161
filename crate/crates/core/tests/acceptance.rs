//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance -- AC2 AC7` runs a subset. The
//! process exits non-zero on a FAIL only when `ACCEPTANCE_STRICT` is set.

mod common;

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Isometry3, Matrix3xX, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatreach_core::bench::{default_suite, execute_suite, SceneBatch, SuiteSpec};
use splatreach_core::controller::{build_damper_constraints, control_step, ControllerConfig};
use splatreach_core::distance::{
    query_scene_geometric, rasterise_median_depth, sensor_distance, splat_backend, BackendKind, DistanceBackend,
    DistanceResult, Intrinsics, OpacityMode, RasterConfig, SdfBackend, VirtualSensor, WorldSphere,
};
use splatreach_core::kinematics::{default_robot, forward_kinematics, RobotModel, RobotState};
use splatreach_core::qp::QpStatus;
use splatreach_core::scene::{
    generate_synthetic_scene, FloaterSpec, PrimitiveScene, SceneKind, SceneSpec, Splat, SplatKind, SplatScene,
};
use splatreach_core::sim::{run_trial, SimConfig, TrialStatus};

type Check = fn() -> (bool, String);

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, &str, Check); 9] = [
        ("AC1", "ellipsoid distance oracle", ac1_distance_oracle),
        ("AC2", "median depth and raster convergence", ac2_median_depth),
        ("AC3", "QP KKT and optimality", ac3_qp_contract),
        ("AC4", "damper boundary behaviour", ac4_damper_boundaries),
        ("AC5", "free-space convergence", ac5_convergence),
        ("AC6", "benchmark on 50 table + 50 bookshelf scenes", ac6_benchmark),
        ("AC7", "floater ablation", ac7_floaters),
        ("AC8", "control-step throughput on a 60k-splat scene", ac8_throughput),
        ("AC9", "bit-identical reruns", ac9_determinism),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| f.eq_ignore_ascii_case(id)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = check();
        ran += 1;
        if !pass {
            failed += 1;
        }
        println!(
            "{} {id} {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} passed", ran - failed);
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}

fn robot() -> (RobotModel, splatreach_core::kinematics::SphereSet, RobotState) {
    let desc = default_robot();
    let (model, spheres) = desc.build().unwrap();
    (model, spheres, RobotState::new(0.0, 0.0, 0.0, desc.home))
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    UnitQuaternion::from_scaled_axis(axis.normalize() * rng.random_range(0.0..PI))
}

/// Minimum distance from `p` to a 1000 x 1000 latitude-longitude sampling of
/// the ellipsoid surface.
struct SurfaceSampler {
    theta: Vec<(f64, f64)>,
    phi: Vec<(f64, f64)>,
}

impl SurfaceSampler {
    fn new(per_axis: usize) -> Self {
        SurfaceSampler {
            theta: (0..per_axis).map(|i| (PI * (i as f64 + 0.5) / per_axis as f64).sin_cos()).collect(),
            phi: (0..per_axis).map(|j| (2.0 * PI * j as f64 / per_axis as f64).sin_cos()).collect(),
        }
    }

    fn distance(&self, center: &Vector3<f64>, rotation: &Rotation3<f64>, axes: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
        let local = rotation.inverse() * (p - center);
        let mut best = f64::INFINITY;
        for &(st, ct) in &self.theta {
            let dz = axes.z * ct - local.z;
            let dz2 = dz * dz;
            if dz2 >= best {
                continue;
            }
            for &(sp, cp) in &self.phi {
                let dx = axes.x * st * cp - local.x;
                let dy = axes.y * st * sp - local.y;
                best = best.min(dx * dx + dy * dy + dz2);
            }
        }
        best.sqrt()
    }
}

fn ac1_distance_oracle() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let sampler = SurfaceSampler::new(1000);
    let start = Instant::now();
    let (mut worst, mut min_cos) = (0.0f64, f64::INFINITY);
    let h = 1e-6;
    for _ in 0..1000 {
        let scales = Vector3::new(rng.random_range(0.02..0.5), rng.random_range(0.02..0.5), rng.random_range(0.01..0.5));
        let q = random_rotation(&mut rng);
        let mean = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let splat = Splat::new(mean, scales, [q.w, q.i, q.j, q.k], 1.0, SplatKind::Volumetric).unwrap();
        let scene = SplatScene::new(vec![splat]).unwrap();
        let e = scene.ellipsoid(0);
        let radius = rng.random_range(0.01..0.1);
        let offset = Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
        let centre = mean + offset.component_mul(&Vector3::repeat(e.max_semi_axis().max(0.3)));
        let query = |c: Vector3<f64>| {
            let s = WorldSphere { id: 0, link: 0, center: c, radius };
            query_scene_geometric(&scene, &[s], 100.0, 0.0)[0]
        };
        let r = query(centre);
        let surface = sampler.distance(&e.center, &e.rotation, &e.semi_axes, &centre);
        let oracle = if e.level(&centre) < 1.0 { -surface } else { surface } - radius;
        worst = worst.max((r.distance - oracle).abs());
        let grad = Vector3::from_fn(|i, _| {
            let mut d = Vector3::zeros();
            d[i] = h;
            (query(centre + d).distance - query(centre - d).distance) / (2.0 * h)
        });
        min_cos = min_cos.min(-grad.normalize().dot(&r.direction));
    }
    let elapsed = start.elapsed().as_secs_f64();
    (
        worst <= 2e-3 && min_cos > 0.999 && elapsed < 60.0,
        format!("max |error| {worst:.2e} m (<= 2e-3), min gradient cosine {min_cos:.6} (> 0.999), {elapsed:.1} s (< 60)"),
    )
}

fn facing_disc(depth: f64, sigma: f64, opacity: f64) -> Splat {
    Splat::new(Vector3::new(0.0, 0.0, depth), Vector3::new(sigma, sigma, 0.0), [1.0, 0.0, 0.0, 0.0], opacity, SplatKind::Flat)
        .unwrap()
}

fn centre_depth(splats: Vec<Splat>) -> f64 {
    let scene = SplatScene::new(splats).unwrap();
    let k = Intrinsics::fov90(17, 17);
    rasterise_median_depth(&scene, &Isometry3::identity(), &k, RasterConfig::default().alpha_min, OpacityMode::Falloff)
        .get(8, 8)
}

/// Raster and geometric distance from a sphere above a tilted opaque disc,
/// with the one-pixel angular bound for the sphere-to-plane distance.
fn raster_error(res: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0);
    let rot = UnitQuaternion::rotation_between(&Vector3::z(), &axis).unwrap();
    let disc = Splat {
        mean: Vector3::new(0.3, -0.2, 0.1),
        rotation: rot,
        ..facing_disc(0.0, 0.2, 1.0)
    };
    let height = rng.random_range(0.15..0.3);
    let foot = Vector3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), height);
    let centre = disc.mean + rot * foot;
    let scene = SplatScene::with_params(vec![disc], 2.0, 1e-9).unwrap();
    let sphere = WorldSphere { id: 0, link: 0, center: centre, radius: 0.05 };
    let geo = query_scene_geometric(&scene, &[sphere], 1.0, 0.0)[0].distance;
    let config = RasterConfig { resolution: res, ..RasterConfig::default() };
    let raster = sensor_distance(&scene, &VirtualSensor::at_sphere(&sphere, res), 1.0, &config)
        .iter()
        .map(|r| r.distance)
        .fold(f64::INFINITY, f64::min);
    let pixel = (2.0 / res as f64).atan();
    let bound = (geo + sphere.radius) * (1.0 / pixel.cos() - 1.0);
    (raster - geo, bound)
}

fn ac2_median_depth() -> (bool, String) {
    let single = centre_depth(vec![facing_disc(2.0, 1.0, 1.0)]);
    let translucent = centre_depth(vec![facing_disc(1.0, 1.0, 0.4), facing_disc(2.0, 1.0, 0.4)]);
    let dense = centre_depth(vec![facing_disc(2.0, 1.0, 1.0), facing_disc(1.0, 1.0, 0.6)]);
    let exact = single == 2.0 && translucent == 2.0 && dense == 1.0;
    let (mut coarse, mut fine) = (0.0, 0.0);
    let mut within = true;
    for seed in 0..20 {
        let (e16, b16) = raster_error(16, seed);
        let (e32, b32) = raster_error(32, seed);
        within &= e16.abs() <= b16 && e32.abs() <= b32;
        coarse += e16.abs();
        fine += e32.abs();
    }
    let halves = fine <= 0.5 * coarse;
    (
        exact && within && halves,
        format!(
            "depths {single}/{translucent}/{dense} (expected 2/2/1), one-pixel bound held {within}, \
             mean error {:.2e} m at 16^2 -> {:.2e} m at 32^2",
            coarse / 20.0,
            fine / 20.0
        ),
    )
}

fn ac3_qp_contract() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let f = common::fuzz_problem(&mut rng);
        match common::check_fuzzed(&f, &mut rng, 1000) {
            Ok(r) => worst = worst.max(r),
            Err(e) => return (false, format!("problem {trial} (n = {}): {e}", f.problem.dim())),
        }
    }
    (true, format!("1000 problems, worst KKT residual {worst:.2e} (<= 1e-8), no feasible sample better"))
}

/// Backend returning fixed results.
struct Fixed(Vec<DistanceResult>);

impl DistanceBackend for Fixed {
    fn kind(&self) -> BackendKind {
        BackendKind::GtSdf
    }

    fn query(&self, _: &[WorldSphere], _: f64) -> Vec<DistanceResult> {
        self.0.clone()
    }
}

fn ac4_damper_boundaries() -> (bool, String) {
    let config = ControllerConfig::default();
    let (d_i, d_s, eta) = (config.influence_distance, config.stopping_distance, config.damper_gain);
    let result = |sphere_id, distance, direction| DistanceResult {
        distance,
        direction,
        sphere_id,
        backend: BackendKind::GtSdf,
        camera_id: None,
    };
    let results = [result(0, d_i, Vector3::x()), result(0, d_s, Vector3::x())];
    let jac = vec![Matrix3xX::from_element(3, 1.0); 2];
    let (_, rhs) = build_damper_constraints(&results, &jac, d_i, d_s, eta, 3).unwrap();
    let exact = rhs[0] == eta && rhs[1] == 0.0;

    let (model, spheres, state) = robot();
    let fk = forward_kinematics(&model, &state);
    let mut worst = f64::NEG_INFINITY;
    let id = spheres.len() - 1;
    for dir in [Vector3::x(), Vector3::y(), -Vector3::y(), -Vector3::z()] {
        let ee = fk.end_effector;
        let target = Isometry3::from_parts(Translation3::from(ee.translation.vector + dir * 0.3), ee.rotation);
        let out = control_step(&model, &spheres, &state, &target, &Fixed(vec![result(id, d_s, dir)]), &config).unwrap();
        if out.diagnostics.qp_status != QpStatus::Optimal {
            return (false, format!("QP status {:?}", out.diagnostics.qp_status));
        }
        let s = &spheres.spheres[id];
        let centre = fk.links[s.link].transform_point(&nalgebra::Point3::from(Vector3::from(s.offset))).coords;
        let jv = fk.point_jacobian(&model, s.link, &centre);
        worst = worst.max(dir.dot(&(jv * out.joint_velocities.rows(0, model.n_dof()))));
    }
    (
        exact && worst <= 1e-8,
        format!("rhs {}/{} at d_i/d_s (expected {eta}/0), worst approach speed at contact {worst:.2e} (<= 1e-8)", rhs[0], rhs[1]),
    )
}

fn ac5_convergence() -> (bool, String) {
    let (model, spheres, state) = robot();
    let gt = PrimitiveScene::new(vec![], Isometry3::identity()).unwrap();
    let backend = SdfBackend::new(&gt);
    let config = ControllerConfig::default();
    let sim = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut successes, mut worst_slack, mut worst_time) = (0, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let arm: Vec<f64> = state.arm.iter().map(|q| q + rng.random_range(-0.5..0.5)).collect();
        let pose = RobotState::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.5..1.5), arm);
        let target = forward_kinematics(&model, &pose).end_effector;
        let r = run_trial(&model, &spheres, &gt, &state, &target, &backend, &config, &sim);
        if r.status == TrialStatus::Success {
            successes += 1;
        }
        worst_time = worst_time.max(r.steps as f64 * r.dt);
        if let Some(last) = r.trajectory.iter().rev().find(|s| s.qp_status.is_some()) {
            worst_slack = worst_slack.max(last.slack_norm);
        }
    }
    (
        successes == 20 && worst_slack < 1e-4 && worst_time <= 60.0,
        format!("{successes}/20 reached, slowest {worst_time:.1} s (<= 60), worst final slack {worst_slack:.2e} (< 1e-4)"),
    )
}

fn report_dir(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn ac6_benchmark() -> (bool, String) {
    let mut spec = default_suite();
    spec.sim.record_timing = true;
    let run = match execute_suite(&spec) {
        Ok(run) => run,
        Err(e) => return (false, e.to_string()),
    };
    let report = &run.report;
    let _ = report.write(report_dir("table1"));
    let row = |backend, active| {
        report
            .rows
            .iter()
            .find(|r| r.variant.backend == backend && r.variant.active_cost == active && r.variant.collision_constraints)
            .map(|r| &r.metrics)
            .unwrap()
    };
    let mut notes = Vec::new();
    let rates: Vec<f64> = report.rows.iter().map(|r| r.metrics.success_rate).collect();
    let spread = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - rates.iter().cloned().fold(f64::INFINITY, f64::min);
    let parity = spread <= 0.10 + 1e-12;
    let mut improves = true;
    for b in BackendKind::ALL {
        let (off, on) = (row(b, false), row(b, true));
        let (d_off, d_on) = (off.avg_distance.unwrap_or(f64::NAN), on.avg_distance.unwrap_or(f64::NAN));
        improves &= on.success_rate > off.success_rate && d_on > d_off;
        notes.push(format!(
            "{b} {:.2}->{:.2} D {:.4}->{:.4}",
            off.success_rate, on.success_rate, d_off, d_on
        ));
    }
    let collisions: usize = report.rows.iter().map(|r| r.metrics.collisions).sum();
    let qp_ms = report
        .rows
        .iter()
        .filter_map(|r| r.metrics.qp_time_mean_ms)
        .fold(0.0f64, f64::max);
    let pass = parity && improves && collisions == 0 && qp_ms < 1.0;
    (
        pass,
        format!(
            "(a) success spread {:.0} pp (<= 10) {}; (b) active cost raises success and clearance {} [{}]; \
             (c) {collisions} collisions; (d) worst mean QP time {qp_ms:.3} ms (< 1)",
            spread * 100.0,
            if parity { "ok" } else { "FAIL" },
            if improves { "ok" } else { "FAIL" },
            notes.join("; ")
        ),
    )
}

fn floater_suite(noise: Option<FloaterSpec>) -> SuiteSpec {
    let batch = |kind| SceneBatch {
        kind,
        count: 1,
        seed: 7,
        clutter: None,
        spacing: None,
        targets: 7,
    };
    SuiteSpec {
        backends: vec![BackendKind::Geometric, BackendKind::Raster],
        active_cost: vec![true],
        noise,
        ..SuiteSpec::new("floaters", vec![batch(SceneKind::Table), batch(SceneKind::Bookshelf)])
    }
}

fn ac7_floaters() -> (bool, String) {
    let clean = execute_suite(&floater_suite(None)).unwrap().report;
    let noisy = execute_suite(&floater_suite(Some(FloaterSpec::new(1000, 77)))).unwrap().report;
    let _ = noisy.write(report_dir("floaters"));
    let get = |r: &splatreach_core::bench::BenchReport, b| r.rows.iter().find(|row| row.variant.backend == b).unwrap().metrics.clone();
    let (geo_clean, geo_noisy) = (get(&clean, BackendKind::Geometric), get(&noisy, BackendKind::Geometric));
    let (ras_clean, ras_noisy) = (get(&clean, BackendKind::Raster), get(&noisy, BackendKind::Raster));
    let pass = geo_noisy.successes == 0
        && ras_clean.successes > 0
        && 2 * ras_noisy.successes >= ras_clean.successes
        && ras_noisy.collisions == 0;
    (
        pass,
        format!(
            "geometric {}/{} -> {}/{}; raster {}/{} -> {}/{} with {} collisions",
            geo_clean.successes,
            geo_clean.trials,
            geo_noisy.successes,
            geo_noisy.trials,
            ras_clean.successes,
            ras_clean.trials,
            ras_noisy.successes,
            ras_noisy.trials,
            ras_noisy.collisions
        ),
    )
}

fn ac8_throughput() -> (bool, String) {
    let (model, spheres, home) = robot();
    let mut spec = SceneSpec::new(SceneKind::Bookshelf, 8);
    let mut g = generate_synthetic_scene(&spec).unwrap();
    while g.splats.len() < 60_000 {
        spec.spacing *= (g.splats.len() as f64 / 61_000.0).sqrt();
        g = generate_synthetic_scene(&spec).unwrap();
    }
    let target = g.file.targets().unwrap()[0];
    let start = g.file.start.clone().unwrap_or_default();
    let state = RobotState::new(start.base[0], start.base[1], start.base[2], start.arm.unwrap_or(home.arm));
    let config = ControllerConfig::default();
    let sdf = SdfBackend::new(&g.primitives);
    let sim = SimConfig { max_steps: 200, ..SimConfig::default() };
    let trial = run_trial(&model, &spheres, &g.primitives, &state, &target, &sdf, &config, &sim);
    let states: Vec<RobotState> = trial.trajectory.iter().step_by((trial.trajectory.len() / 10).max(1)).map(|s| s.state.clone()).collect();
    let mut notes = Vec::new();
    let mut pass = true;
    for kind in [BackendKind::Geometric, BackendKind::Raster] {
        let backend = splat_backend(kind, &g.splats, config.opacity_min, config.raster).unwrap();
        let mut times = Vec::new();
        for s in &states {
            let t = Instant::now();
            control_step(&model, &spheres, s, &target, &backend, &config).unwrap();
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let max = times.iter().cloned().fold(0.0, f64::max);
        pass &= max < 100.0;
        notes.push(format!("{kind} mean {mean:.1} ms, max {max:.1} ms"));
    }
    (
        pass,
        format!("{} splats, {} states: {} (< 100 ms)", g.splats.len(), states.len(), notes.join("; ")),
    )
}

fn ac9_determinism() -> (bool, String) {
    let batch = |kind| SceneBatch {
        kind,
        count: 2,
        seed: 40,
        clutter: None,
        spacing: None,
        targets: 1,
    };
    let spec = SuiteSpec::new("rerun", vec![batch(SceneKind::Table), batch(SceneKind::Bookshelf)]);
    let files = ["metrics.json", "metrics.csv", "trials.csv"];
    let mut outputs = Vec::new();
    for run in 0..2 {
        let dir = report_dir(&format!("rerun{run}"));
        let result = execute_suite(&spec).unwrap();
        result.report.write(&dir).unwrap();
        let mut bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect();
        for (_, trials) in &result.trials {
            for (i, t) in trials.iter().enumerate() {
                let log = dir.join(format!("trial{i}.jsonl"));
                t.write_log(&log).unwrap();
                bytes.push(std::fs::read(&log).unwrap());
            }
        }
        outputs.push(bytes);
    }
    let identical = outputs[0] == outputs[1];
    (
        identical,
        format!("{} report files and trial logs compared, identical: {identical}", outputs[0].len()),
    )
}
