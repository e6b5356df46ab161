use std::f64::consts::FRAC_PI_2;

use nalgebra::{Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::distance::SdfBackend;
use crate::kinematics::default_robot;
use crate::scene::Primitive;

fn robot() -> (RobotModel, SphereSet, RobotState) {
    let desc = default_robot();
    let (m, s) = desc.build().unwrap();
    (m, s, RobotState::new(0.0, 0.0, 0.0, desc.home))
}

fn velocities(v: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(9);
    out.rows_mut(0, v.len()).copy_from_slice(v);
    out
}

fn empty() -> PrimitiveScene {
    PrimitiveScene::new(vec![], Isometry3::identity()).unwrap()
}

#[test]
fn integrate_cases() {
    let (model, _, state) = robot();
    assert_eq!(integrate(&model, &state, &velocities(&[]), 0.05), state);

    let turned = RobotState::new(0.3, 0.4, FRAC_PI_2, state.arm.clone());
    let next = integrate(&model, &turned, &velocities(&[1.0]), 0.05);
    assert!((next.y - 0.45).abs() < 1e-15);
    assert!((next.x - 0.3).abs() < 1e-15);

    let next = integrate(&model, &state, &velocities(&[0.0, 0.4]), 0.05);
    assert_eq!((next.x, next.y), (0.0, 0.0));
    assert!((next.theta - 0.02).abs() < 1e-15);

    let next = integrate(&model, &state, &velocities(&[0.0, 0.0, 100.0]), 0.05);
    assert_eq!(next.arm[0], model.joints[0].upper);
}

#[test]
fn collision_inside_a_box() {
    let (model, spheres, state) = robot();
    let base_sphere = forward_kinematics(&model, &state).sphere_positions(&spheres)[0].center;
    let scene = PrimitiveScene::new(
        vec![Primitive::cuboid(Isometry3::translation(base_sphere.x, base_sphere.y, base_sphere.z), [0.1, 0.1, 0.1])],
        Isometry3::identity(),
    )
    .unwrap();
    let (collided, clearance) = check_collision(&scene, &model, &state, &spheres);
    assert!(collided);
    assert!(clearance < 0.0);
}

#[test]
fn clearance_matches_per_primitive_minimum() {
    let (model, spheres, state) = robot();
    let scene = PrimitiveScene::new(
        vec![
            Primitive::cuboid(Isometry3::translation(3.0, 0.0, 0.5), [0.4, 1.0, 1.0]),
            Primitive::cylinder(Isometry3::translation(0.0, -2.5, 0.5), 0.2, 1.0),
        ],
        Isometry3::identity(),
    )
    .unwrap();
    let (collided, clearance) = check_collision(&scene, &model, &state, &spheres);
    assert!(!collided);
    assert!(clearance >= 0.1);
    let mut brute = f64::INFINITY;
    for s in forward_kinematics(&model, &state).sphere_positions(&spheres) {
        for i in 0..scene.primitives().len() {
            brute = brute.min(scene.primitive_sdf(i, &s.center).0 - s.radius);
        }
    }
    assert_eq!(clearance, brute);
}

#[test]
fn target_at_start_succeeds_immediately() {
    let (model, spheres, state) = robot();
    let gt = empty();
    let target = forward_kinematics(&model, &state).end_effector;
    let result = run_trial(&model, &spheres, &gt, &state, &target, &SdfBackend::new(&gt), &ControllerConfig::default(), &SimConfig::default());
    assert_eq!(result.status, TrialStatus::Success);
    assert!(result.steps <= 5);
    let p = result.end_effector_positions();
    let length: f64 = p.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    assert!(length < 1e-3);
}

fn reachable_target(rng: &mut ChaCha8Rng, model: &RobotModel, home: &[f64]) -> Isometry3<f64> {
    let arm: Vec<f64> = home.iter().map(|q| q + rng.random_range(-0.5..0.5)).collect();
    let s = RobotState::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.5..1.5), arm);
    forward_kinematics(model, &s).end_effector
}

#[test]
fn free_space_targets_converge() {
    let (model, spheres, state) = robot();
    let gt = empty();
    let backend = SdfBackend::new(&gt);
    let config = ControllerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let target = reachable_target(&mut rng, &model, &state.arm);
        let r = run_trial(&model, &spheres, &gt, &state, &target, &backend, &config, &SimConfig::default());
        assert_eq!(r.status, TrialStatus::Success, "{:?}", (r.final_translation_error, r.final_rotation_error));
        let last = r.trajectory.iter().rev().find(|s| s.qp_status.is_some()).unwrap();
        assert!(last.slack_norm < 1e-4, "slack {}", last.slack_norm);
    }
}

fn closed_box(center: Vector3<f64>, inner: f64, wall: f64) -> Vec<Primitive> {
    let outer = inner + 2.0 * wall;
    let off = 0.5 * (inner + wall);
    let mut prims = Vec::new();
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let mut size = [outer; 3];
            size[axis] = wall;
            let mut t = center;
            t[axis] += sign * off;
            prims.push(Primitive::cuboid(Isometry3::translation(t.x, t.y, t.z), size));
        }
    }
    prims
}

#[test]
fn enclosed_target_times_out_without_collision() {
    let (model, spheres, state) = robot();
    let centre = Vector3::new(1.2, 0.0, 0.6);
    let target = Isometry3::from_parts(Translation3::from(centre), UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::PI));
    let gt = PrimitiveScene::new(closed_box(centre, 0.2, 0.05), target).unwrap();
    let sim = SimConfig {
        max_steps: 300,
        ..SimConfig::default()
    };
    let r = run_trial(&model, &spheres, &gt, &state, &target, &SdfBackend::new(&gt), &ControllerConfig::default(), &sim);
    assert_eq!(r.status, TrialStatus::Timeout);
    assert!(r.min_clearance.unwrap() >= 0.0);
}

#[test]
fn trials_are_deterministic_and_replayable() {
    let (model, spheres, state) = robot();
    let gt = PrimitiveScene::new(vec![Primitive::cuboid(Isometry3::translation(1.0, 0.4, 0.4), [0.3, 0.3, 0.8])], Isometry3::identity()).unwrap();
    let backend = SdfBackend::new(&gt);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = reachable_target(&mut rng, &model, &state.arm);
    let sim = SimConfig {
        max_steps: 200,
        ..SimConfig::default()
    };
    let a = run_trial(&model, &spheres, &gt, &state, &target, &backend, &ControllerConfig::default(), &sim);
    let b = run_trial(&model, &spheres, &gt, &state, &target, &backend, &ControllerConfig::default(), &sim);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    for w in a.trajectory.windows(2) {
        let q = DVector::from_column_slice(&w[0].joint_velocities);
        assert_eq!(integrate(&model, &w[0].state, &q, sim.dt), w[1].state);
    }
    if a.status == TrialStatus::Success {
        assert!(a.min_clearance.unwrap() >= 0.0);
    }
}

#[test]
fn logs_round_trip() {
    let (model, spheres, state) = robot();
    let gt = empty();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let target = reachable_target(&mut rng, &model, &state.arm);
    let sim = SimConfig {
        max_steps: 20,
        ..SimConfig::default()
    };
    let r = run_trial(&model, &spheres, &gt, &state, &target, &SdfBackend::new(&gt), &ControllerConfig::default(), &sim);
    let dir = tempfile::tempdir().unwrap();
    r.save(dir.path().join("t.json")).unwrap();
    assert_eq!(TrialResult::load(dir.path().join("t.json")).unwrap(), r);
    r.write_log(dir.path().join("t.jsonl")).unwrap();
    let text = std::fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    assert_eq!(text.lines().count(), r.trajectory.len());
    let first: TrialStep = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first, r.trajectory[0]);
}
