use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use splatreach_core::bench::{default_suite, noise_suite, render_report, run_benchmark, ReportFormat, SuiteSpec};
use splatreach_core::controller::ControllerConfig;
use splatreach_core::distance::{splat_backend, BackendKind, DistanceBackend, SdfBackend};
use splatreach_core::kinematics::{default_robot, RobotDescription, RobotState};
use splatreach_core::scene::{
    generate_synthetic_scene, inject_floaters, load_scene, write_scene, Activation, FloaterSpec, SceneFile,
    SceneKind, SceneSpec, SplatScene,
};
use splatreach_core::sim::{run_trial, SimConfig};

#[derive(Parser)]
#[command(name = "splatreach", version, about = "Reactive mobile manipulation around Gaussian-splat scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Table,
    Bookshelf,
}

impl From<Kind> for SceneKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Table => SceneKind::Table,
            Kind::Bookshelf => SceneKind::Bookshelf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Geometric,
    Raster,
    GtSdf,
}

impl From<Backend> for BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Geometric => BackendKind::Geometric,
            Backend::Raster => BackendKind::Raster,
            Backend::GtSdf => BackendKind::GtSdf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Md,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic scenes (scene JSON plus splat PLY).
    Gen {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Clutter objects per scene.
        #[arg(long)]
        clutter: Option<usize>,
        /// Reaching targets per scene.
        #[arg(long, default_value_t = 1)]
        targets: usize,
        /// Surface sampling spacing (m).
        #[arg(long)]
        spacing: Option<f64>,
    },
    /// Run one reaching trial.
    Run {
        #[arg(long)]
        scene: PathBuf,
        /// Splat PLY; required for the splat backends.
        #[arg(long)]
        splats: Option<PathBuf>,
        #[arg(long, value_enum)]
        backend: Backend,
        #[arg(long, value_enum, default_value = "on")]
        active_cost: Toggle,
        #[arg(long, value_enum, default_value = "on")]
        constraints: Toggle,
        /// Controller config JSON; defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Robot description JSON; the built-in robot when absent.
        #[arg(long)]
        robot: Option<PathBuf>,
        /// Index into the scene's targets.
        #[arg(long, default_value_t = 0)]
        target: usize,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Record wall-clock timing in the log.
        #[arg(long)]
        timing: bool,
        /// Trial result JSON.
        #[arg(long)]
        out: PathBuf,
        /// Per-step JSON-lines log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run a benchmark suite and write metrics tables.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use 500 scenes per batch.
        #[arg(long)]
        full_scale: bool,
    },
    /// Print a stored benchmark report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
    },
    /// Add low-opacity floaters to a splat scene.
    InjectNoise {
        #[arg(long)]
        splats: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Floater standard deviation (m).
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the default controller, robot and suite files.
    Defaults {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            kind,
            count,
            seed,
            out,
            clutter,
            targets,
            spacing,
        } => {
            create_dir(&out)?;
            for i in 0..count as u64 {
                let mut spec = SceneSpec::new(kind.into(), seed + i);
                if let Some(c) = clutter {
                    spec.clutter = c;
                }
                if let Some(s) = spacing {
                    spec.spacing = s;
                }
                spec.targets = targets;
                let g = generate_synthetic_scene(&spec)?;
                let id = spec.id();
                g.file.save(out.join(format!("{id}.json")))?;
                write_scene(&g.splats, out.join(format!("{id}.ply")), Activation::Standard)?;
                println!("{id}: {} primitives, {} splats", g.file.primitives.len(), g.splats.len());
            }
        }
        Command::Run {
            scene,
            splats,
            backend,
            active_cost,
            constraints,
            config,
            robot,
            target,
            max_steps,
            timing,
            out,
            log,
        } => {
            let file = SceneFile::load(&scene)?;
            let ground_truth = file.primitive_scene()?;
            let targets = file.targets()?;
            let Some(goal) = targets.get(target) else {
                bail!("scene has {} targets, index {target} requested", targets.len());
            };
            let mut controller = match config {
                Some(p) => ControllerConfig::load(p)?,
                None => ControllerConfig::default(),
            };
            controller.active_cost = matches!(active_cost, Toggle::On);
            controller.collision_constraints = matches!(constraints, Toggle::On);
            controller.validate()?;
            let description = match robot {
                Some(p) => RobotDescription::load(p)?,
                None => default_robot(),
            };
            let (model, spheres) = description.build()?;
            let start = file.start.clone().unwrap_or_default();
            let state = RobotState::new(
                start.base[0],
                start.base[1],
                start.base[2],
                start.arm.unwrap_or_else(|| description.home.clone()),
            );
            let mut sim = SimConfig {
                record_timing: timing,
                ..SimConfig::default()
            };
            if let Some(m) = max_steps {
                sim.max_steps = m;
            }
            let kind = BackendKind::from(backend);
            let splat_scene: Option<SplatScene> = match (kind, splats) {
                (BackendKind::GtSdf, _) => None,
                (_, Some(p)) => Some(load_scene(p, Activation::Standard)?),
                (_, None) => bail!("--splats is required for the {kind} backend"),
            };
            let sdf = SdfBackend::new(&ground_truth);
            let splat = splat_scene
                .as_ref()
                .and_then(|s| splat_backend(kind, s, controller.opacity_min, controller.raster));
            let b: &dyn DistanceBackend = match &splat {
                Some(b) => b,
                None => &sdf,
            };
            let result = run_trial(&model, &spheres, &ground_truth, &state, goal, b, &controller, &sim);
            result.save(&out)?;
            if let Some(log) = log {
                result.write_log(log)?;
            }
            println!(
                "{}: {} steps, final error {:.4} m / {:.4} rad",
                result.status.as_str(),
                result.steps,
                result.final_translation_error,
                result.final_rotation_error
            );
        }
        Command::Bench { suite, out, full_scale } => {
            let mut spec = SuiteSpec::load(&suite)?;
            if full_scale {
                for b in &mut spec.scenes {
                    b.count = 500;
                }
            }
            let report = run_benchmark(&spec, &out)?;
            print!("{}", report.markdown());
        }
        Command::Report { input, format } => {
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
                Format::Md => ReportFormat::Markdown,
            };
            println!("{}", render_report(&input, format)?.trim_end());
        }
        Command::InjectNoise {
            splats,
            n,
            seed,
            scale,
            out,
        } => {
            let scene = load_scene(&splats, Activation::Standard)?;
            let mut spec = FloaterSpec::new(n, seed);
            if let Some(s) = scale {
                spec.scale = s;
            }
            let noisy = inject_floaters(&scene, &spec)?;
            write_scene(&noisy, &out, Activation::Standard)?;
            println!("{} -> {} splats", scene.len(), noisy.len());
        }
        Command::Defaults { out } => {
            create_dir(&out)?;
            ControllerConfig::default().save(out.join("controller.json"))?;
            default_robot().save(out.join("robot.json"))?;
            default_suite().save(out.join("suite_table1.json"))?;
            noise_suite().save(out.join("suite_floaters.json"))?;
        }
    }
    Ok(())
}
