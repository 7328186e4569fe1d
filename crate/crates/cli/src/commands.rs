//! The four subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use softavatar::avatar::{make_simulable, AvatarModel, AvatarOptions, SoftLayer};
use softavatar::benchmark::{run_benchmark, BenchmarkTable};
use softavatar::body::io::{load_body, save_body};
use softavatar::body::{generate_synthetic_body, BodyTemplate};
use softavatar::contact::{max_point_penetration, Collider};
use softavatar::kinematics::{Pose, RigidTransform};
use softavatar::math::{Quat, Vec3};
use softavatar::mocap::{synthetic_motion, MocapSequence};
use softavatar::scene::Scene;
use softavatar::sim::{DofModel, SimState, Simulable};
use softavatar::validation::{run_validation, ValidationReport};

use crate::config::{preset, GenerateConfig, SceneConfig};

/// Counts printed after generation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BodyCounts {
    pub bones: usize,
    pub tet_vertices: usize,
    pub tets: usize,
    pub surface_vertices: usize,
    pub surface_triangles: usize,
}

impl BodyCounts {
    pub fn of(t: &BodyTemplate) -> Self {
        Self {
            bones: t.n_bones(),
            tet_vertices: t.n_tet_vertices(),
            tets: t.tets.len(),
            surface_vertices: t.surface_vertices.len(),
            surface_triangles: t.surface_triangles.len(),
        }
    }
}

pub fn generate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<BodyCounts> {
    let cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<GenerateConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => GenerateConfig::default(),
    };
    let body = cfg.body_config()?;
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let template = generate_synthetic_body(&body, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_body(out, &template)?;
    Ok(BodyCounts::of(&template))
}

/// Overrides applied on top of a scene file.
#[derive(Clone, Debug, Default)]
pub struct SimulateArgs {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub static_mode: bool,
    pub frames: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AvatarMetrics {
    pub objective: Option<f64>,
    pub max_collider_penetration: f64,
    /// Largest joint rotation error to the tracked frame (rad).
    pub tracking_error: Option<f64>,
    /// Unposed displacement magnitude per surface vertex.
    pub soft_displacement: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub time: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective: Option<f64>,
    pub objective_trace: Vec<f64>,
    pub max_avatar_penetration: f64,
    pub avatars: Vec<AvatarMetrics>,
}

#[derive(Clone, Debug)]
pub struct SimulationSummary {
    pub frames: Vec<FrameMetrics>,
    pub out: PathBuf,
}

struct Loaded {
    scene: Scene,
    clips: Vec<Option<MocapSequence>>,
    colliders: Vec<Collider>,
}

fn load_scene(cfg: &SceneConfig, seed: u64, frames: usize) -> Result<Loaded> {
    let mut avatars = Vec::new();
    let mut clips = Vec::new();
    for (i, entry) in cfg.avatars.iter().enumerate() {
        let template = match (&entry.model, &entry.preset) {
            (Some(p), _) => load_body(p).with_context(|| format!("avatar {i}: loading {}", p.display()))?,
            (None, Some(name)) => generate_synthetic_body(&preset(name)?, seed)?,
            (None, None) => bail!("avatar {i} has no body"),
        };
        let options = AvatarOptions {
            seed: entry.options.seed ^ seed,
            ..entry.options.clone()
        };
        let model = AvatarModel::build(&template, &cfg.settings, &options).with_context(|| format!("avatar {i}: building model"))?;
        let clip = match (&entry.mocap, &entry.motion) {
            (Some(p), _) => Some(MocapSequence::load(p).with_context(|| format!("avatar {i}: loading {}", p.display()))?),
            (None, Some(m)) => {
                let n = if m.frames == 0 { frames + 1 } else { m.frames };
                Some(synthetic_motion(model.n_bones(), n, m.frame_rate, m.amplitude, seed.wrapping_add(i as u64))?)
            }
            (None, None) => None,
        };
        let mut pose = Pose::identity(model.n_bones());
        pose.root = RigidTransform::new(Quat::from_scaled_axis(Vec3::from(entry.rotation)), Vec3::from(entry.offset));
        let (anchor, q) = model.state_for_pose(&pose)?;
        let colliders = cfg.colliders.clone();
        let mut sim = make_simulable(model, &cfg.settings, clip.as_ref(), &colliders).with_context(|| format!("avatar {i}"))?;
        let n = q.len();
        sim.set_state(SimState {
            q,
            v: vec![0.0; n],
            anchor,
            time: 0.0,
        })?;
        avatars.push(sim);
        clips.push(clip);
    }
    let stiffness = cfg.settings.stiffness.avatar_contact;
    Ok(Loaded {
        scene: Scene::new(avatars, stiffness, cfg.settings.newton.clone()),
        clips,
        colliders: cfg.colliders.clone(),
    })
}

fn joint_angle_error(sim: &Simulable<AvatarModel>, target: &Pose) -> Result<f64> {
    let (pose, _) = sim.model().pose_jacobian(sim.config())?;
    let current = Pose::from_vector(&pose)?;
    Ok(current
        .joint_rotations
        .iter()
        .zip(&target.joint_rotations)
        .map(|(a, b)| (Quat::from_scaled_axis(*b).inverse() * Quat::from_scaled_axis(*a)).angle())
        .fold(0.0, f64::max))
}

fn avatar_metrics(sim: &Simulable<AvatarModel>, clip: Option<&MocapSequence>, colliders: &[Collider], frame: usize) -> Result<AvatarMetrics> {
    let time = sim.state().time;
    let shapes: Vec<_> = colliders.iter().map(|c| c.shape_at(time)).collect();
    let nodes = sim.nodes();
    let m = sim.model();
    let soft_displacement = match m.soft {
        SoftLayer::None => vec![0.0; m.surface.len()],
        _ => m.surface.iter().map(|&v| m.displacement(&sim.state().q, v).norm()).collect(),
    };
    let tracking_error = match clip {
        Some(c) => Some(joint_angle_error(sim, c.frame(frame.saturating_sub(1)))?),
        None => None,
    };
    Ok(AvatarMetrics {
        objective: None,
        max_collider_penetration: max_point_penetration(&nodes, &shapes),
        tracking_error,
        soft_displacement,
    })
}

fn write_topology(dir: &Path, model: &AvatarModel, nodes: &[Vec3]) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("topology.obj"))?);
    writeln!(w, "# shared surface topology; frame files hold positions only")?;
    for p in nodes {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
    }
    for t in &model.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

fn write_frame(dir: &Path, frame: usize, nodes: &[Vec3]) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(format!("frame_{frame:05}.obj")))?);
    for p in nodes {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs a scene, writing per-avatar meshes, `metrics.jsonl` and
/// `timings.csv` into the output directory.
pub fn simulate(scene_path: &Path, args: &SimulateArgs) -> Result<SimulationSummary> {
    let cfg = SceneConfig::load(scene_path)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let frames = args.frames.unwrap_or(cfg.frames);
    let static_mode = args.static_mode || cfg.static_mode;
    let out = args.out.clone().or(cfg.output.clone()).context("no output directory (use --out)")?;
    std::fs::create_dir_all(&out)?;

    let Loaded { mut scene, clips, colliders } = load_scene(&cfg, seed, frames)?;
    let dirs: Vec<PathBuf> = (0..scene.avatars.len()).map(|i| out.join(format!("avatar{i}"))).collect();
    for (dir, sim) in dirs.iter().zip(&scene.avatars) {
        std::fs::create_dir_all(dir)?;
        write_topology(dir, sim.model(), &sim.nodes())?;
    }
    let mut metrics = BufWriter::new(File::create(out.join("metrics.jsonl"))?);
    let mut timings = BufWriter::new(File::create(out.join("timings.csv"))?);
    writeln!(timings, "frame,wall_seconds")?;

    let mut all = Vec::with_capacity(frames + 1);
    for frame in 0..=frames {
        let t0 = Instant::now();
        let report = if frame > 0 { Some(scene.advance(static_mode)?) } else { None };
        let wall = t0.elapsed().as_secs_f64();
        let mut avatars = Vec::with_capacity(scene.avatars.len());
        for (i, sim) in scene.avatars.iter().enumerate() {
            write_frame(&dirs[i], frame, &sim.nodes())?;
            let mut m = avatar_metrics(sim, clips[i].as_ref(), &colliders, frame)?;
            if frame > 0 {
                m.objective = Some(sim.objective_value(&sim.state().q, true)?);
            }
            avatars.push(m);
        }
        let fm = FrameMetrics {
            frame,
            time: scene.avatars[0].state().time,
            converged: report.as_ref().is_none_or(|r| r.converged),
            iterations: report.as_ref().map_or(0, |r| r.iterations),
            objective: report.as_ref().map(|r| r.final_objective()),
            objective_trace: report.as_ref().map(|r| r.objective_trace.clone()).unwrap_or_default(),
            max_avatar_penetration: scene.max_penetration(),
            avatars,
        };
        serde_json::to_writer(&mut metrics, &fm)?;
        writeln!(metrics)?;
        writeln!(timings, "{frame},{wall}")?;
        all.push(fm);
    }
    metrics.flush()?;
    timings.flush()?;
    Ok(SimulationSummary { frames: all, out })
}

pub fn validate(seed: u64, states: usize) -> Result<ValidationReport> {
    Ok(run_validation(seed, states)?)
}

pub fn benchmark(config: Option<&Path>, steps: usize, seed: u64, out: Option<&Path>) -> Result<BenchmarkTable> {
    let template = match config {
        Some(p) if p.extension().is_some_and(|e| e == "toml") => {
            let text = std::fs::read_to_string(p)?;
            let cfg: GenerateConfig = toml::from_str(&text)?;
            generate_synthetic_body(&cfg.body_config()?, seed)?
        }
        Some(p) => load_body(p)?,
        None => generate_synthetic_body(&preset("humanoid")?, seed)?,
    };
    let table = run_benchmark(&template, &AvatarOptions::default(), steps, seed)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("timings.csv"), table.to_csv())?;
    }
    Ok(table)
}
