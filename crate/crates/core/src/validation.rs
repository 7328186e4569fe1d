//! Registered numerical checks run by the `validate` command: central
//! differences of every energy term and of the nodes Jacobian, elastic
//! invariances, the integrator closed form and bookkeeping round trips.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::avatar::{make_simulable, AvatarModel, AvatarOptions, SoftLayer};
use crate::body::{generate_synthetic_body, BodyConfig, BodyTemplate};
use crate::contact::{Collider, Shape};
use crate::error::Result;
use crate::fem::{strain_energy_density, ElementMaterial};
use crate::kinematics::{Pose, RigidTransform, BONE_DOFS};
use crate::math::{max_abs, Mat3, Quat, Vec3};
use crate::mocap::MocapSequence;
use crate::rom::reduced_elastic;
use crate::scene::Scene;
use crate::sim::particle::{ConstantForce, ParticleModel};
use crate::sim::{Accumulator, DofModel, Level, NewtonSettings, SimState, Simulable, SimulableApi, SimulationSettings};
use crate::sparse::TripletMatrix;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst error over the samples (relative unless noted by the check).
    pub error: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl CheckResult {
    pub fn new(name: &str, error: f64, tolerance: f64, samples: usize) -> Self {
        Self {
            name: name.to_string(),
            passed: error.is_finite() && error < tolerance,
            error,
            tolerance,
            samples,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Names of every registered check, in run order.
pub const CHECKS: &[&str] = &[
    "gradient.joints",
    "gradient.tracking",
    "gradient.gravity.articulated",
    "gradient.gravity.soft",
    "gradient.elastic.fem",
    "gradient.elastic.rom",
    "gradient.elastic.rom_cubature",
    "gradient.contact.collider",
    "gradient.contact.soft_collider",
    "gradient.contact.capsules",
    "gradient.contact.soft_capsules",
    "gradient.inertial",
    "jacobian.nodes.articulated",
    "jacobian.nodes.fem",
    "jacobian.nodes.rom",
    "hessian.elastic.fem",
    "hessian.elastic.rom",
    "hessian.inertial",
    "invariance.elastic.rest",
    "invariance.elastic.rotation",
    "invariance.elastic.translation",
    "integrator.free_fall",
    "integrator.zero_potential",
    "skinning.partition_of_unity",
    "state.stack_round_trip",
    "state.determinism",
];

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const HESSIAN_TOLERANCE: f64 = 1e-3;
const FD_STEP: f64 = 1e-6;

/// Worst `max_i |g_i - fd_i| / max(|g|_inf, |fd|_inf)` over the states,
/// with `fd` the central difference of the value along each listed DoF.
pub fn gradient_check<F>(name: &str, f: F, states: &[Vec<f64>], dofs: &[usize], tol: f64) -> Result<CheckResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut worst: f64 = 0.0;
    for q in states {
        let (_, g) = f(q)?;
        let mut fd = Vec::with_capacity(dofs.len());
        for &i in dofs {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += FD_STEP;
            qm[i] -= FD_STEP;
            fd.push((f(&qp)?.0 - f(&qm)?.0) / (2.0 * FD_STEP));
        }
        let analytic: Vec<f64> = dofs.iter().map(|&i| g[i]).collect();
        let scale = max_abs(&analytic).max(max_abs(&fd)).max(1e-12);
        let err = analytic.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
    }
    Ok(CheckResult::new(name, worst, tol, states.len()))
}

/// Like [`gradient_check`] for a vector function and its Jacobian
/// (rows = outputs).
pub fn jacobian_check<F>(name: &str, f: F, states: &[Vec<f64>], dofs: &[usize], tol: f64) -> Result<CheckResult>
where
    F: Fn(&[f64]) -> Result<(Vec<f64>, TripletMatrix)>,
{
    let mut worst: f64 = 0.0;
    for q in states {
        let (_, jac) = f(q)?;
        let dense = jac.to_dense();
        let mut num = 0.0_f64;
        let mut scale = 1e-12_f64;
        for &i in dofs {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += FD_STEP;
            qm[i] -= FD_STEP;
            let (yp, ym) = (f(&qp)?.0, f(&qm)?.0);
            for r in 0..yp.len() {
                let fd = (yp[r] - ym[r]) / (2.0 * FD_STEP);
                num = num.max((dense[(r, i)] - fd).abs());
                scale = scale.max(fd.abs()).max(dense[(r, i)].abs());
            }
        }
        worst = worst.max(num / scale);
    }
    Ok(CheckResult::new(name, worst, tol, states.len()))
}

fn arm_options() -> AvatarOptions {
    AvatarOptions {
        point_handles: 8,
        ..AvatarOptions::default()
    }
}

fn rom_exact() -> SimulationSettings {
    SimulationSettings {
        elastic_cubature: false,
        inertial_cubature: false,
        ..SimulationSettings::rom()
    }
}

fn rom_cubature() -> SimulationSettings {
    SimulationSettings {
        inertial_cubature: false,
        ..SimulationSettings::rom()
    }
}

struct Fixtures {
    template: BodyTemplate,
    articulated: AvatarModel,
    fem: AvatarModel,
    rom: AvatarModel,
    rom_cubature: AvatarModel,
    rng: ChaCha8Rng,
    states: usize,
}

impl Fixtures {
    fn new(seed: u64, states: usize) -> Result<Self> {
        let template = generate_synthetic_body(&BodyConfig::arm(), seed)?;
        let build = |s: &SimulationSettings| AvatarModel::build(&template, s, &arm_options());
        Ok(Self {
            articulated: build(&SimulationSettings::articulated())?,
            fem: build(&SimulationSettings::fem())?,
            rom: build(&rom_exact())?,
            rom_cubature: build(&rom_cubature())?,
            template,
            rng: ChaCha8Rng::seed_from_u64(seed),
            states,
        })
    }

    fn random_state(&mut self, m: &AvatarModel, rotation: f64, soft: f64) -> (Vec<f64>, Vec<f64>) {
        let (anchor, mut q) = m.rest_state();
        for b in 0..m.n_bones() {
            for k in 0..3 {
                q[BONE_DOFS * b + k] += self.rng.random_range(-rotation..rotation);
                q[BONE_DOFS * b + 3 + k] += self.rng.random_range(-0.02..0.02);
            }
        }
        for x in q[m.bone_dofs()..].iter_mut() {
            *x = soft * self.rng.random_range(-1.0..1.0);
        }
        (anchor, q)
    }

    fn states_for(&mut self, m: &AvatarModel, rotation: f64, soft: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let (anchor, _) = m.rest_state();
        let qs = (0..self.states).map(|_| self.random_state(m, rotation, soft).1).collect();
        (anchor, qs)
    }
}

/// Bone DoFs plus an even sample of the soft block.
fn probe_dofs(m: &AvatarModel, soft_samples: usize) -> Vec<usize> {
    let n = m.dof_count();
    let bd = m.bone_dofs();
    let stride = ((n - bd) / soft_samples.max(1)).max(1);
    (0..bd).chain((bd..n).step_by(stride)).collect()
}

/// A simulable keeping only the named terms, with its anchor set.
fn only_terms(
    model: &AvatarModel,
    settings: &SimulationSettings,
    keep: &[&str],
    mocap: Option<&MocapSequence>,
    colliders: &[Collider],
    anchor: &[f64],
) -> Result<Simulable<AvatarModel>> {
    let mut sim = make_simulable(model.clone(), settings, mocap, colliders)?;
    let names: Vec<String> = sim.term_names().iter().map(|s| s.to_string()).collect();
    for n in names {
        if !keep.contains(&n.as_str()) {
            sim.remove_term(&n);
        }
    }
    let n = sim.dof_count();
    sim.set_state(SimState {
        q: model.rest_state().1,
        v: vec![0.0; n],
        anchor: anchor.to_vec(),
        time: 0.0,
    })?;
    Ok(sim)
}

fn potential_fn(sim: &Simulable<AvatarModel>) -> impl Fn(&[f64]) -> Result<(f64, Vec<f64>)> + '_ {
    move |q| {
        let (acc, _) = sim.evaluate_potential(q, Level::Gradient)?;
        Ok((acc.value, acc.gradient))
    }
}

fn term_check(
    fx: &mut Fixtures,
    name: &str,
    which: &str,
    term: &str,
    mocap: Option<&MocapSequence>,
    colliders: &[Collider],
) -> Result<CheckResult> {
    let (model, settings, soft) = match which {
        "articulated" => (fx.articulated.clone(), SimulationSettings::articulated(), 0.0),
        "fem" => (fx.fem.clone(), SimulationSettings::fem(), 0.004),
        "rom" => (fx.rom.clone(), rom_exact(), 0.004),
        _ => (fx.rom_cubature.clone(), rom_cubature(), 0.004),
    };
    let mut states = Vec::new();
    let mut anchor = Vec::new();
    let shapes: Vec<Shape> = colliders.iter().map(|c| c.shape.clone()).collect();
    while states.len() < fx.states {
        let (a, q) = fx.random_state(&model, 0.3, soft);
        if !shapes.is_empty() {
            // Keep away from the activation kink of the penalty.
            let cfg = model.configure(&a, &q)?;
            let pts = model.nodes(&cfg);
            let near = pts.iter().any(|p| shapes.iter().any(|s| s.signed_distance(p).0.abs() < 1e-5));
            let any = pts.iter().any(|p| shapes.iter().any(|s| s.signed_distance(p).0 < 0.0));
            if near || !any {
                continue;
            }
        }
        anchor = a;
        states.push(q);
    }
    let sim = only_terms(&model, &settings, &[term], mocap, colliders, &anchor)?;
    gradient_check(name, potential_fn(&sim), &states, &probe_dofs(&model, 24), GRADIENT_TOLERANCE)
}

fn posed(model: &AvatarModel, settings: &SimulationSettings, offset: Vec3, rotation: Vec3) -> Result<Simulable<AvatarModel>> {
    let mut pose = Pose::identity(model.n_bones());
    pose.root = RigidTransform::new(Quat::from_scaled_axis(rotation), offset);
    let (anchor, q) = model.state_for_pose(&pose)?;
    let mut sim = make_simulable(model.clone(), settings, None, &[])?;
    let n = q.len();
    sim.set_state(SimState {
        q,
        v: vec![0.0; n],
        anchor,
        time: 0.0,
    })?;
    Ok(sim)
}

fn coupling_check(fx: &mut Fixtures, name: &str, soft_first: bool) -> Result<CheckResult> {
    let (first, fs) = if soft_first {
        (fx.fem.clone(), SimulationSettings::fem())
    } else {
        (fx.articulated.clone(), SimulationSettings::articulated())
    };
    let a = posed(&first, &fs, Vec3::zeros(), Vec3::new(0.2, 0.0, 0.0))?;
    let b = posed(&fx.articulated, &SimulationSettings::articulated(), Vec3::new(0.1, 0.06, 0.0), Vec3::new(0.2, 0.6, 0.3))?;
    let scene = Scene::new(vec![a, b], 1e4, NewtonSettings::default());
    let base = scene.state();
    let offsets = scene.offsets();
    let mut states = Vec::new();
    while states.len() < fx.states {
        let mut q = base.clone();
        for (avatar, &o) in scene.avatars.iter().zip(&offsets) {
            for i in 0..avatar.model().bone_dofs() {
                q[o + i] += fx.rng.random_range(-0.01..0.01);
            }
            for x in q[o + avatar.model().bone_dofs()..o + avatar.dof_count()].iter_mut() {
                *x = fx.rng.random_range(-0.002..0.002);
            }
        }
        let mut acc = Accumulator::new(q.len(), 0, Level::Value);
        if scene.coupling(&q, &mut acc)? > 1e-5 {
            states.push(q);
        }
    }
    let dofs: Vec<usize> = offsets
        .iter()
        .zip(&scene.avatars)
        .flat_map(|(&o, a)| {
            let bd = a.model().bone_dofs();
            let n = a.dof_count();
            (o..o + bd).chain((o + bd..o + n).step_by(((n - bd) / 16).max(1)))
        })
        .collect();
    let f = |q: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut acc = Accumulator::new(q.len(), 0, Level::Gradient);
        scene.coupling(q, &mut acc)?;
        Ok((acc.value, acc.gradient))
    };
    gradient_check(name, f, &states, &dofs, GRADIENT_TOLERANCE)
}

fn inertial_checks(fx: &mut Fixtures) -> Result<(CheckResult, CheckResult)> {
    let (anchor, q0) = fx.random_state(&fx.fem.clone(), 0.3, 0.004);
    let mut sim = only_terms(&fx.fem, &SimulationSettings::fem(), &[], None, &[], &anchor)?;
    let n = sim.dof_count();
    let v: Vec<f64> = (0..n).map(|_| fx.rng.random_range(-0.5..0.5)).collect();
    sim.set_state(SimState {
        q: q0.clone(),
        v,
        anchor,
        time: 0.0,
    })?;
    sim.begin_step();
    let states: Vec<Vec<f64>> = (0..fx.states).map(|_| q0.iter().map(|x| x + fx.rng.random_range(-0.01..0.01)).collect()).collect();
    let dofs = probe_dofs(&fx.fem, 24);
    let grad = gradient_check(
        "gradient.inertial",
        |q| {
            let (f, g, _) = sim.objective_derivatives(q, false)?;
            Ok((f, g))
        },
        &states,
        &dofs,
        GRADIENT_TOLERANCE,
    )?;
    let hess = jacobian_check(
        "hessian.inertial",
        |q| {
            let (_, g, h) = sim.objective_derivatives(q, false)?;
            Ok((g, h))
        },
        &states,
        &dofs,
        HESSIAN_TOLERANCE,
    )?;
    Ok((grad, hess))
}

fn nodes_check(fx: &mut Fixtures, name: &str, which: &str) -> Result<CheckResult> {
    let (model, soft) = match which {
        "articulated" => (fx.articulated.clone(), 0.0),
        "fem" => (fx.fem.clone(), 0.004),
        _ => (fx.rom.clone(), 0.004),
    };
    let (anchor, states) = fx.states_for(&model, 0.4, soft);
    let f = |q: &[f64]| -> Result<(Vec<f64>, TripletMatrix)> {
        let cfg = model.configure(&anchor, q)?;
        Ok((model.nodes(&cfg).iter().flat_map(|p| [p.x, p.y, p.z]).collect(), model.nodes_jacobian(&cfg)))
    };
    jacobian_check(name, f, &states, &probe_dofs(&model, 24), GRADIENT_TOLERANCE)
}

fn elastic_hessian_checks(fx: &mut Fixtures) -> Result<(CheckResult, CheckResult)> {
    let SoftLayer::Fem(layer) = &fx.fem.soft else { unreachable!() };
    let mesh = layer.mesh.clone();
    let n = 3 * fx.fem.rest.len();
    let states: Vec<Vec<f64>> = (0..fx.states).map(|_| (0..n).map(|_| fx.rng.random_range(-0.004..0.004)).collect()).collect();
    let dofs: Vec<usize> = (0..n).step_by((n / 30).max(1)).collect();
    let fem = jacobian_check(
        "hessian.elastic.fem",
        |u| {
            let (_, g, h) = mesh.assemble(u, true, false)?;
            let mut m = TripletMatrix::square(n);
            m.entries = h;
            Ok((g, m))
        },
        &states,
        &dofs,
        HESSIAN_TOLERANCE,
    )?;
    let SoftLayer::Rom(layer) = &fx.rom.soft else { unreachable!() };
    let d = layer.basis.dim();
    let zs: Vec<Vec<f64>> = (0..fx.states).map(|_| (0..d).map(|_| fx.rng.random_range(-0.01..0.01)).collect()).collect();
    let rom = jacobian_check(
        "hessian.elastic.rom",
        |z| {
            let (_, g, h) = reduced_elastic(&layer.mesh, &layer.basis, None, z, true, false)?;
            Ok((g, dense_to_triplets(&h.expect("requested"))))
        },
        &zs,
        &(0..d).collect::<Vec<_>>(),
        HESSIAN_TOLERANCE,
    )?;
    Ok((fem, rom))
}

fn dense_to_triplets(m: &DMatrix<f64>) -> TripletMatrix {
    let mut t = TripletMatrix::new(m.nrows(), m.ncols());
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            t.push(r, c, m[(r, c)]);
        }
    }
    t
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let w = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    Quat::from_scaled_axis(w).to_rotation_matrix().into_inner()
}

fn invariance_checks(fx: &mut Fixtures) -> Result<Vec<CheckResult>> {
    let rng = &mut fx.rng;
    let frame = random_rotation(rng);
    let mat = ElementMaterial::orthotropic(frame, [3e4, 3e4, 1e4], 0.45, 0.5, 2e-3, 1000.0)?;
    let rest = strain_energy_density(&Mat3::identity(), &mat, 0)?.abs();
    let mut rot: f64 = 0.0;
    for _ in 0..100 {
        let f = Mat3::identity() + Mat3::from_fn(|_, _| rng.random_range(-0.3..0.3));
        let r = random_rotation(rng);
        let a = strain_energy_density(&f, &mat, 0)?;
        let b = strain_energy_density(&(r * f), &mat, 0)?;
        rot = rot.max((a - b).abs() / a.abs().max(1e-300));
    }
    let SoftLayer::Fem(layer) = &fx.fem.soft else { unreachable!() };
    let t = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let u: Vec<f64> = (0..fx.fem.rest.len()).flat_map(|_| [t.x, t.y, t.z]).collect();
    let trans = layer.mesh.energy(&u)?.abs();
    Ok(vec![
        CheckResult::new("invariance.elastic.rest", rest, 1e-12, 1),
        CheckResult::new("invariance.elastic.rotation", rot, 1e-10, 100),
        CheckResult::new("invariance.elastic.translation", trans, 1e-12, 1),
    ])
}

fn integrator_checks() -> Result<Vec<CheckResult>> {
    let (m, g, h) = (2.0, -9.81, 0.01);
    let mut sim = Simulable::new(ParticleModel::new(vec![m]), h, NewtonSettings::default(), &[])?;
    sim.add_term(Box::new(ConstantForce { force: vec![m * g] }));
    let mut err: f64 = 0.0;
    for n in 1..=100 {
        sim.step()?;
        let k = n as f64;
        err = err.max((sim.state().q[0] - h * h * g * k * (k + 1.0) / 2.0).abs());
    }
    let mut free = Simulable::new(ParticleModel::with_initial(vec![1.0, 3.0], vec![0.5, -1.0]), 0.1, NewtonSettings::default(), &[])?;
    free.set_velocity(&[2.0, -0.25])?;
    let q_star = free.predictor();
    free.step()?;
    let zero = free.state().q.iter().zip(&q_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(vec![
        CheckResult::new("integrator.free_fall", err, 1e-8, 100),
        CheckResult::new("integrator.zero_potential", zero, 1e-10, 1),
    ])
}

fn bookkeeping_checks(fx: &mut Fixtures) -> Result<Vec<CheckResult>> {
    let pou = fx
        .template
        .skinning_weights
        .iter()
        .map(|w| (w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);

    let s = SimulationSettings::fem();
    let mut sim = make_simulable(fx.fem.clone(), &s, None, &[])?;
    let before = sim.state().clone();
    sim.push_state();
    sim.step()?;
    sim.pop_state()?;
    let stack = if *sim.state() == before { 0.0 } else { 1.0 };

    let run = || -> Result<Vec<f64>> {
        let mut sim = make_simulable(fx.fem.clone(), &s, None, &[])?;
        for _ in 0..2 {
            sim.pre_update()?;
            sim.solve()?;
            sim.post_update()?;
        }
        Ok(sim.state().q.clone())
    };
    let (a, b) = (run()?, run()?);
    let det = if a == b { 0.0 } else { 1.0 };
    Ok(vec![
        CheckResult::new("skinning.partition_of_unity", pou, 1e-9, fx.template.skinning_weights.len()),
        CheckResult::new("state.stack_round_trip", stack, 0.5, 1),
        CheckResult::new("state.determinism", det, 0.5, 2),
    ])
}

/// Runs every registered check on the synthetic arm with `states` random
/// states per finite-difference check.
pub fn run_validation(seed: u64, states: usize) -> Result<ValidationReport> {
    let start = Instant::now();
    let mut fx = Fixtures::new(seed, states.max(1))?;
    let mut checks = Vec::new();
    let mut mocap_pose = Pose::identity(2);
    mocap_pose.joint_rotations[0] = Vec3::new(0.2, -0.4, 0.3);
    mocap_pose.root = RigidTransform::new(Quat::from_scaled_axis(Vec3::new(0.1, 0.2, -0.1)), Vec3::new(0.01, 0.0, 0.02));
    let mocap = MocapSequence::constant(mocap_pose, 30.0, 1)?;
    let floor = Collider::new(Shape::HalfSpace {
        point: [0.0, -0.02, 0.0],
        normal: [0.0, 1.0, 0.0],
    });
    let gravity_free = [("gradient.joints", "articulated", "joints")];
    for (name, which, term) in gravity_free {
        checks.push(term_check(&mut fx, name, which, term, None, &[])?);
    }
    checks.push(term_check(&mut fx, "gradient.tracking", "articulated", "tracking", Some(&mocap), &[])?);
    checks.push(term_check(&mut fx, "gradient.gravity.articulated", "articulated", "gravity", None, &[])?);
    checks.push(term_check(&mut fx, "gradient.gravity.soft", "fem", "gravity", None, &[])?);
    checks.push(term_check(&mut fx, "gradient.elastic.fem", "fem", "elastic", None, &[])?);
    checks.push(term_check(&mut fx, "gradient.elastic.rom", "rom", "elastic", None, &[])?);
    checks.push(term_check(&mut fx, "gradient.elastic.rom_cubature", "rom_cubature", "elastic", None, &[])?);
    checks.push(term_check(&mut fx, "gradient.contact.collider", "articulated", "contact", None, std::slice::from_ref(&floor))?);
    checks.push(term_check(&mut fx, "gradient.contact.soft_collider", "fem", "contact", None, &[floor])?);
    checks.push(coupling_check(&mut fx, "gradient.contact.capsules", false)?);
    checks.push(coupling_check(&mut fx, "gradient.contact.soft_capsules", true)?);
    let (grad, hess) = inertial_checks(&mut fx)?;
    checks.push(grad);
    checks.push(nodes_check(&mut fx, "jacobian.nodes.articulated", "articulated")?);
    checks.push(nodes_check(&mut fx, "jacobian.nodes.fem", "fem")?);
    checks.push(nodes_check(&mut fx, "jacobian.nodes.rom", "rom")?);
    let (hf, hr) = elastic_hessian_checks(&mut fx)?;
    checks.extend([hf, hr, hess]);
    checks.extend(invariance_checks(&mut fx)?);
    checks.extend(integrator_checks()?);
    checks.extend(bookkeeping_checks(&mut fx)?);
    Ok(ValidationReport {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}
