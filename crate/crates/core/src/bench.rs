//! Benchmark harness: scene batches x backends x constraint toggles.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::Isometry3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::ControllerConfig;
use crate::distance::{splat_backend, BackendKind, DistanceBackend, SdfBackend};
use crate::kinematics::{default_robot, forward_kinematics, RobotDescription, RobotModel, RobotState, SphereSet};
use crate::metrics::{common_successes, compute_metrics, mean_clearance, path_length, MetricsRecord};
use crate::pose::pose_distance;
use crate::scene::{generate_synthetic_scene, inject_floaters, FloaterSpec, PrimitiveScene, SceneKind, SceneSpec, SplatScene};
use crate::sim::{run_trial, SimConfig, TrialResult, TrialStatus};
use crate::{Error, Result};

pub const SUITE_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TRIALS_CSV: &str = "trials.csv";

/// `count` scenes with seeds `seed, seed + 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBatch {
    pub kind: SceneKind,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clutter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<f64>,
    #[serde(default = "one")]
    pub targets: usize,
}

fn one() -> usize {
    1
}

impl SceneBatch {
    pub fn specs(&self) -> Vec<SceneSpec> {
        (0..self.count as u64)
            .map(|i| {
                let mut spec = SceneSpec::new(self.kind, self.seed + i);
                if let Some(c) = self.clutter {
                    spec.clutter = c;
                }
                if let Some(s) = self.spacing {
                    spec.spacing = s;
                }
                spec.targets = self.targets;
                spec
            })
            .collect()
    }
}

fn default_backends() -> Vec<BackendKind> {
    BackendKind::ALL.to_vec()
}

fn default_active_cost() -> Vec<bool> {
    vec![false, true]
}

fn default_constraints() -> Vec<bool> {
    vec![true]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub version: u32,
    pub name: String,
    pub scenes: Vec<SceneBatch>,
    #[serde(default = "default_backends")]
    pub backends: Vec<BackendKind>,
    #[serde(default = "default_active_cost")]
    pub active_cost: Vec<bool>,
    #[serde(default = "default_constraints")]
    pub collision_constraints: Vec<bool>,
    /// Floaters added to every splat scene; scene `i` uses seed `noise.seed + i`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<FloaterSpec>,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<RobotDescription>,
}

impl SuiteSpec {
    pub fn new(name: impl Into<String>, scenes: Vec<SceneBatch>) -> Self {
        SuiteSpec {
            version: SUITE_VERSION,
            name: name.into(),
            scenes,
            backends: default_backends(),
            active_cost: default_active_cost(),
            collision_constraints: default_constraints(),
            noise: None,
            controller: ControllerConfig::default(),
            sim: SimConfig::default(),
            robot: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SuiteSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SUITE_VERSION {
            return Err(Error::InvalidArgument(format!(
                "suite version {} is not supported (expected {SUITE_VERSION})",
                self.version
            )));
        }
        if self.scenes.iter().all(|b| b.count == 0) {
            return Err(Error::InvalidArgument("suite contains no scenes".into()));
        }
        if self.scenes.iter().any(|b| b.targets == 0) {
            return Err(Error::InvalidArgument("scene batches need at least one target".into()));
        }
        if self.backends.is_empty() || self.active_cost.is_empty() || self.collision_constraints.is_empty() {
            return Err(Error::InvalidArgument("backends and toggles must be non-empty".into()));
        }
        self.controller.validate()?;
        self.sim.validate()?;
        if let Some(r) = &self.robot {
            r.build()?;
        }
        Ok(())
    }

    /// Rows of the result table, in output order.
    pub fn variants(&self) -> Vec<Variant> {
        let mut out = Vec::new();
        for &backend in &self.backends {
            for &collision_constraints in &self.collision_constraints {
                for &active_cost in &self.active_cost {
                    out.push(Variant {
                        backend,
                        collision_constraints,
                        active_cost,
                    });
                }
            }
        }
        out
    }

    /// SHA-256 of the canonical JSON of the suite with the robot resolved.
    pub fn config_hash(&self) -> Result<String> {
        let mut resolved = self.clone();
        resolved.robot.get_or_insert_with(default_robot);
        let bytes = serde_json::to_vec(&resolved)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// 50 table and 50 bookshelf scenes, every backend with and without the active cost.
pub fn default_suite() -> SuiteSpec {
    let batch = |kind| SceneBatch {
        kind,
        count: 50,
        seed: 0,
        clutter: None,
        spacing: None,
        targets: 1,
    };
    SuiteSpec::new("table1", vec![batch(SceneKind::Table), batch(SceneKind::Bookshelf)])
}

/// Seven-target scenes with 1000 floaters, geometric against raster.
pub fn noise_suite() -> SuiteSpec {
    let batch = |kind| SceneBatch {
        kind,
        count: 5,
        seed: 1000,
        clutter: None,
        spacing: None,
        targets: 7,
    };
    SuiteSpec {
        backends: vec![BackendKind::Geometric, BackendKind::Raster],
        active_cost: vec![true],
        noise: Some(FloaterSpec::new(1000, 0)),
        ..SuiteSpec::new("floaters", vec![batch(SceneKind::Table), batch(SceneKind::Bookshelf)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub backend: BackendKind,
    pub collision_constraints: bool,
    pub active_cost: bool,
}

impl Variant {
    pub fn label(&self) -> String {
        format!(
            "{}{}{}",
            self.backend,
            if self.collision_constraints { "" } else { "/unconstrained" },
            if self.active_cost { "/active" } else { "" }
        )
    }

    pub fn controller(&self, base: &ControllerConfig) -> ControllerConfig {
        ControllerConfig {
            collision_constraints: self.collision_constraints,
            active_cost: self.active_cost,
            ..base.clone()
        }
    }
}

/// A generated scene ready for trials.
pub struct BenchScene {
    pub id: String,
    pub kind: SceneKind,
    pub splats: SplatScene,
    pub ground_truth: PrimitiveScene,
    pub targets: Vec<Isometry3<f64>>,
    pub start: RobotState,
}

pub fn prepare_scenes(spec: &SuiteSpec, home: &[f64]) -> Result<Vec<BenchScene>> {
    let specs: Vec<SceneSpec> = spec.scenes.iter().flat_map(SceneBatch::specs).collect();
    specs
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let g = generate_synthetic_scene(s)?;
            let splats = match &spec.noise {
                Some(noise) => inject_floaters(
                    &g.splats,
                    &FloaterSpec {
                        seed: noise.seed + i as u64,
                        ..noise.clone()
                    },
                )?,
                None => g.splats,
            };
            let start = g.file.start.clone().unwrap_or_default();
            Ok(BenchScene {
                id: s.id(),
                kind: s.kind,
                splats,
                targets: g.file.targets()?,
                ground_truth: g.primitives,
                start: RobotState::new(start.base[0], start.base[1], start.base[2], start.arm.unwrap_or_else(|| home.to_vec())),
            })
        })
        .collect()
}

/// Runs one trial, turning a panic into a QP failure.
#[allow(clippy::too_many_arguments)]
pub fn run_guarded(
    model: &RobotModel,
    spheres: &SphereSet,
    scene: &BenchScene,
    target: &Isometry3<f64>,
    backend: BackendKind,
    controller: &ControllerConfig,
    sim: &SimConfig,
) -> TrialResult {
    let attempt = catch_unwind(AssertUnwindSafe(|| {
        let sdf = SdfBackend::new(&scene.ground_truth);
        let splat = splat_backend(backend, &scene.splats, controller.opacity_min, controller.raster);
        let b: &dyn DistanceBackend = match &splat {
            Some(b) => b,
            None => &sdf,
        };
        run_trial(model, spheres, &scene.ground_truth, &scene.start, target, b, controller, sim)
    }));
    attempt.unwrap_or_else(|_| {
        let ee = forward_kinematics(model, &scene.start).end_effector;
        let (et, er) = pose_distance(&ee, target);
        TrialResult {
            status: TrialStatus::QpFailure,
            steps: 0,
            dt: sim.dt,
            final_translation_error: et,
            final_rotation_error: er,
            min_clearance: None,
            trajectory: Vec::new(),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub id: String,
    pub kind: SceneKind,
    pub splats: usize,
    pub targets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub variant: Variant,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub variant: String,
    pub scene: String,
    pub target: usize,
    pub status: TrialStatus,
    pub steps: usize,
    pub final_translation_error: f64,
    pub final_rotation_error: f64,
    pub min_clearance: Option<f64>,
    pub mean_clearance: Option<f64>,
    pub path_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub version: u32,
    pub suite: String,
    pub config_hash: String,
    pub scenes: Vec<SceneSummary>,
    pub splats_mean: f64,
    pub splats_std: f64,
    /// Trials per configuration.
    pub trials: usize,
    /// Trials successful under every configuration.
    pub common_successes: usize,
    pub rows: Vec<MetricsRow>,
    pub trial_summaries: Vec<TrialSummary>,
}

impl BenchReport {
    pub fn row(&self, variant: &Variant) -> Option<&MetricsRecord> {
        self.rows.iter().find(|r| r.variant == *variant).map(|r| &r.metrics)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(METRICS_JSON);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: BenchReport = serde_json::from_str(&text)?;
        if report.version != REPORT_VERSION {
            return Err(Error::Format(format!(
                "report version {} is not supported (expected {REPORT_VERSION})",
                report.version
            )));
        }
        Ok(report)
    }

    /// Writes `metrics.json`, `metrics.csv` and `trials.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_JSON);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(METRICS_CSV);
        std::fs::write(&path, self.metrics_csv()?).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(TRIALS_CSV);
        let mut w = csv::Writer::from_path(&path)?;
        for t in &self.trial_summaries {
            w.serialize(t)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow::from(r))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn markdown(&self) -> String {
        let fmt = |v: Option<f64>, scale: f64, digits: usize| v.map_or("N/A".to_string(), |v| format!("{:.*}", digits, v * scale));
        let mut out = format!(
            "# {}\n\nconfig `{}`; {} scenes, {:.0} ± {:.0} splats; {} trials per row, {} common successes\n\n",
            self.suite,
            self.config_hash,
            self.scenes.len(),
            self.splats_mean,
            self.splats_std,
            self.trials,
            self.common_successes
        );
        out.push_str("| Method | Active cost | Success | D_Avg* (m) | Gracefulness* (m/s²) | Path* (m) | Coll. | QP time (ms) | Rate (Hz) |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let m = &r.metrics;
            let qp = match (m.qp_time_mean_ms, m.qp_time_std_ms) {
                (Some(a), Some(b)) => format!("{a:.3} ± {b:.3}"),
                _ => "N/A".into(),
            };
            out.push_str(&format!(
                "| {}{} | {} | {:.3} | {} | {} | {} | {} | {} | {} |\n",
                r.variant.backend,
                if r.variant.collision_constraints { "" } else { " (no constraints)" },
                if r.variant.active_cost { "yes" } else { "no" },
                m.success_rate,
                fmt(m.avg_distance, 1.0, 3),
                fmt(m.gracefulness, 1.0, 3),
                fmt(m.path_length, 1.0, 3),
                m.collisions,
                qp,
                fmt(m.control_rate_hz, 1.0, 1),
            ));
        }
        out
    }
}

/// Flat CSV form of a metrics row; empty cells mean not available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub label: String,
    pub backend: BackendKind,
    pub collision_constraints: bool,
    pub active_cost: bool,
    pub trials: usize,
    pub successes: usize,
    pub collisions: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub common_successes: usize,
    pub avg_distance: Option<f64>,
    pub gracefulness: Option<f64>,
    pub path_length: Option<f64>,
    pub qp_time_mean_ms: Option<f64>,
    pub qp_time_std_ms: Option<f64>,
    pub control_rate_hz: Option<f64>,
}

impl From<&MetricsRow> for CsvRow {
    fn from(r: &MetricsRow) -> Self {
        let m = &r.metrics;
        CsvRow {
            label: r.label.clone(),
            backend: r.variant.backend,
            collision_constraints: r.variant.collision_constraints,
            active_cost: r.variant.active_cost,
            trials: m.trials,
            successes: m.successes,
            collisions: m.collisions,
            success_rate: m.success_rate,
            collision_rate: m.collision_rate,
            common_successes: m.common_successes,
            avg_distance: m.avg_distance,
            gracefulness: m.gracefulness,
            path_length: m.path_length,
            qp_time_mean_ms: m.qp_time_mean_ms,
            qp_time_std_ms: m.qp_time_std_ms,
            control_rate_hz: m.control_rate_hz,
        }
    }
}

impl From<CsvRow> for MetricsRow {
    fn from(c: CsvRow) -> Self {
        MetricsRow {
            label: c.label,
            variant: Variant {
                backend: c.backend,
                collision_constraints: c.collision_constraints,
                active_cost: c.active_cost,
            },
            metrics: MetricsRecord {
                trials: c.trials,
                successes: c.successes,
                collisions: c.collisions,
                success_rate: c.success_rate,
                collision_rate: c.collision_rate,
                common_successes: c.common_successes,
                avg_distance: c.avg_distance,
                gracefulness: c.gracefulness,
                path_length: c.path_length,
                qp_time_mean_ms: c.qp_time_mean_ms,
                qp_time_std_ms: c.qp_time_std_ms,
                control_rate_hz: c.control_rate_hz,
            },
        }
    }
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize::<CsvRow>()
        .map(|row| Ok(MetricsRow::from(row?)))
        .collect()
}

/// Per-variant trial lists, aligned across variants as (scene, target) pairs.
pub struct BenchRun {
    pub report: BenchReport,
    pub trials: Vec<(Variant, Vec<TrialResult>)>,
}

/// Generates the scenes, runs every (variant, scene, target) trial and
/// aggregates the results. Nothing is written to disk.
pub fn execute_suite(spec: &SuiteSpec) -> Result<BenchRun> {
    spec.validate()?;
    let description = spec.robot.clone().unwrap_or_else(default_robot);
    let scenes = prepare_scenes(spec, &description.home)?;
    evaluate(spec, &scenes)
}

/// Runs the variant matrix of `spec` over prepared scenes.
pub fn evaluate(spec: &SuiteSpec, scenes: &[BenchScene]) -> Result<BenchRun> {
    if scenes.is_empty() {
        return Err(Error::InvalidArgument("no scenes to evaluate".into()));
    }
    let description = spec.robot.clone().unwrap_or_else(default_robot);
    let (model, spheres) = description.build()?;
    let cases: Vec<(usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(s, scene)| (0..scene.targets.len()).map(move |t| (s, t)))
        .collect();
    let variants = spec.variants();
    let jobs: Vec<(usize, usize, usize)> = (0..variants.len())
        .flat_map(|v| cases.iter().map(move |&(s, t)| (v, s, t)))
        .collect();
    let controllers: Vec<ControllerConfig> = variants.iter().map(|v| v.controller(&spec.controller)).collect();
    let results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(v, s, t)| {
            run_guarded(&model, &spheres, &scenes[s], &scenes[s].targets[t], variants[v].backend, &controllers[v], &spec.sim)
        })
        .collect();

    let mut grouped: Vec<(Variant, Vec<TrialResult>)> = variants.iter().map(|v| (*v, Vec::with_capacity(cases.len()))).collect();
    for ((v, _, _), r) in jobs.iter().zip(results) {
        grouped[*v].1.push(r);
    }
    let groups: Vec<&[TrialResult]> = grouped.iter().map(|(_, g)| g.as_slice()).collect();
    let mask = common_successes(&groups)?;
    let rows = grouped
        .iter()
        .map(|(v, trials)| {
            Ok(MetricsRow {
                label: v.label(),
                variant: *v,
                metrics: compute_metrics(trials, Some(&mask))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let trial_summaries = grouped
        .iter()
        .flat_map(|(v, trials)| {
            trials.iter().zip(&cases).map(|(t, &(s, target))| TrialSummary {
                variant: v.label(),
                scene: scenes[s].id.clone(),
                target,
                status: t.status,
                steps: t.steps,
                final_translation_error: t.final_translation_error,
                final_rotation_error: t.final_rotation_error,
                min_clearance: t.min_clearance,
                mean_clearance: mean_clearance(t),
                path_length: path_length(&t.end_effector_positions()),
            })
        })
        .collect();

    let counts: Vec<f64> = scenes.iter().map(|s| s.splats.len() as f64).collect();
    let splats_mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let splats_std = (counts.iter().map(|c| (c - splats_mean).powi(2)).sum::<f64>() / counts.len() as f64).sqrt();
    let report = BenchReport {
        version: REPORT_VERSION,
        suite: spec.name.clone(),
        config_hash: spec.config_hash()?,
        scenes: scenes
            .iter()
            .map(|s| SceneSummary {
                id: s.id.clone(),
                kind: s.kind,
                splats: s.splats.len(),
                targets: s.targets.len(),
            })
            .collect(),
        splats_mean,
        splats_std,
        trials: cases.len(),
        common_successes: mask.iter().filter(|m| **m).count(),
        rows,
        trial_summaries,
    };
    Ok(BenchRun { report, trials: grouped })
}

/// Runs the suite and writes the report files into `out`.
pub fn run_benchmark(spec: &SuiteSpec, out: impl AsRef<Path>) -> Result<BenchReport> {
    let run = execute_suite(spec)?;
    let out = out.as_ref();
    run.report.write(out)?;
    spec.save(out.join("suite.json"))?;
    Ok(run.report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidArgument(format!("unknown report format '{other}'"))),
        }
    }
}

/// Renders a stored report.
pub fn render_report(dir: impl AsRef<Path>, format: ReportFormat) -> Result<String> {
    let report = BenchReport::load(dir)?;
    match format {
        ReportFormat::Csv => report.metrics_csv(),
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&report.rows)?),
        ReportFormat::Markdown => Ok(report.markdown()),
    }
}

#[cfg(test)]
mod tests;
