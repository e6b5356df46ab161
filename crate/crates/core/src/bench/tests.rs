use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::scene::{Splat, SplatKind};

fn free_space_scenes(count: usize) -> Vec<BenchScene> {
    let desc = default_robot();
    let (model, _) = desc.build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    (0..count)
        .map(|i| {
            let far = Splat::new(Vector3::new(20.0, 20.0, 0.5), Vector3::new(0.01, 0.01, 0.01), [1.0, 0.0, 0.0, 0.0], 1.0, SplatKind::Volumetric).unwrap();
            let arm: Vec<f64> = desc.home.iter().map(|q| q + rng.random_range(-0.3..0.3)).collect();
            let goal = RobotState::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), arm);
            BenchScene {
                id: format!("free_{i}"),
                kind: SceneKind::Table,
                splats: SplatScene::new(vec![far]).unwrap(),
                ground_truth: PrimitiveScene::new(vec![], Isometry3::identity()).unwrap(),
                targets: vec![forward_kinematics(&model, &goal).end_effector],
                start: RobotState::new(0.0, 0.0, 0.0, desc.home.clone()),
            }
        })
        .collect()
}

fn small_suite() -> SuiteSpec {
    let mut spec = SuiteSpec::new(
        "small",
        vec![SceneBatch {
            kind: SceneKind::Table,
            count: 1,
            seed: 5,
            clutter: Some(2),
            spacing: Some(0.04),
            targets: 1,
        }],
    );
    spec.sim.max_steps = 30;
    spec
}

#[test]
fn free_space_targets_all_succeed() {
    let spec = SuiteSpec::new("free", vec![]);
    let run = evaluate(&spec, &free_space_scenes(2)).unwrap();
    assert_eq!(run.report.rows.len(), 6);
    for row in &run.report.rows {
        assert_eq!(row.metrics.success_rate, 1.0, "{}", row.label);
        assert_eq!(row.metrics.collisions, 0);
    }
}

#[test]
fn toggle_matrix_has_two_rows_per_backend() {
    let spec = SuiteSpec::new("m", vec![]);
    let variants = spec.variants();
    assert_eq!(variants.len(), 2 * BackendKind::ALL.len());
    for b in BackendKind::ALL {
        let rows: Vec<_> = variants.iter().filter(|v| v.backend == b).collect();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().any(|v| v.active_cost) && rows.iter().any(|v| !v.active_cost));
    }
}

#[test]
fn same_suite_gives_identical_bytes() {
    let spec = small_suite();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_benchmark(&spec, a.path()).unwrap();
    run_benchmark(&spec, b.path()).unwrap();
    for name in [METRICS_CSV, METRICS_JSON, TRIALS_CSV] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let report = BenchReport::load(a.path()).unwrap();
    assert_eq!(report.scenes.len(), 1);
    assert!(report.scenes[0].splats > 100);
    assert_eq!(report.trial_summaries.len(), 6);
}

#[test]
fn csv_and_json_round_trip_exactly() {
    let spec = small_suite();
    let report = execute_suite(&spec).unwrap().report;
    let parsed = parse_metrics_csv(&report.metrics_csv().unwrap()).unwrap();
    assert_eq!(parsed, report.rows);
    let json: BenchReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(json, report);
    let md = report.markdown();
    assert_eq!(md.lines().filter(|l| l.starts_with("| ")).count(), 1 + report.rows.len());
}

#[test]
fn reports_render_in_every_format() {
    let dir = tempfile::tempdir().unwrap();
    run_benchmark(&small_suite(), dir.path()).unwrap();
    for f in ["csv", "json", "md"] {
        let text = render_report(dir.path(), f.parse().unwrap()).unwrap();
        assert!(text.contains("geometric"));
    }
    assert!("xml".parse::<ReportFormat>().is_err());
}

#[test]
fn config_hash_tracks_configuration() {
    let spec = small_suite();
    let h = spec.config_hash().unwrap();
    assert_eq!(h.len(), 64);
    assert_eq!(h, spec.config_hash().unwrap());
    let mut other = spec.clone();
    other.controller.servo_gain += 0.1;
    assert_ne!(h, other.config_hash().unwrap());
    let mut explicit = spec.clone();
    explicit.robot = Some(default_robot());
    assert_eq!(h, explicit.config_hash().unwrap());
}

#[test]
fn invalid_suites_are_rejected() {
    let mut spec = small_suite();
    spec.version = 99;
    assert!(spec.validate().is_err());
    let mut spec = small_suite();
    spec.backends.clear();
    assert!(spec.validate().is_err());
    assert!(SuiteSpec::new("empty", vec![]).validate().is_err());
    assert!(evaluate(&small_suite(), &[]).is_err());
}

#[test]
fn suite_round_trips_with_defaults() {
    let text = r#"{"version": 1, "name": "t", "scenes": [{"kind": "bookshelf", "count": 3}]}"#;
    let spec: SuiteSpec = serde_json::from_str(text).unwrap();
    assert_eq!(spec.backends, BackendKind::ALL.to_vec());
    assert_eq!(spec.active_cost, vec![false, true]);
    assert_eq!(spec.scenes[0].specs().len(), 3);
    assert_eq!(spec.scenes[0].specs()[2].seed, 2);
    let dir = tempfile::tempdir().unwrap();
    spec.save(dir.path().join("s.json")).unwrap();
    assert_eq!(SuiteSpec::load(dir.path().join("s.json")).unwrap(), spec);
}
