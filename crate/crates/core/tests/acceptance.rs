//! One pass/fail line per primary acceptance criterion. Run with
//! `cargo test -p softavatar --test acceptance -- --nocapture`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softavatar::avatar::{make_simulable, AvatarModel, AvatarOptions, SoftLayer};
use softavatar::benchmark::run_benchmark;
use softavatar::body::{generate_synthetic_body, BodyConfig, BodyTemplate};
use softavatar::contact::{Collider, Shape};
use softavatar::fem::{strain_energy_density, ElementMaterial, FemMesh};
use softavatar::kinematics::{Pose, RigidTransform};
use softavatar::math::{Mat3, Quat, Vec3};
use softavatar::mocap::MocapSequence;
use softavatar::rom::{reduced_elastic, sample_states};
use softavatar::scene::Scene;
use softavatar::sim::particle::{ConstantForce, ParticleModel};
use softavatar::sim::{DofModel, NewtonSettings, SimState, Simulable, SimulationSettings};
use softavatar::validation::{run_validation, ValidationReport};

struct Outcome {
    id: usize,
    passed: bool,
    detail: String,
}

fn report(id: usize, passed: bool, detail: String) -> Outcome {
    println!("criterion {id}: {} | {detail}", if passed { "PASS" } else { "FAIL" });
    Outcome { id, passed, detail }
}

fn check(r: &ValidationReport, prefix: &str) -> (bool, f64) {
    let sel: Vec<_> = r.checks.iter().filter(|c| c.name.starts_with(prefix)).collect();
    (!sel.is_empty() && sel.iter().all(|c| c.passed), sel.iter().map(|c| c.error).fold(0.0, f64::max))
}

// 1. Finite-difference agreement of every term and Jacobian.
fn gradients(r: &ValidationReport) -> Outcome {
    let (ok, worst) = r
        .checks
        .iter()
        .filter(|c| c.name.starts_with("gradient.") || c.name.starts_with("jacobian.") || c.name.starts_with("hessian."))
        .fold((true, 0.0f64), |(ok, w), c| (ok && c.passed && c.samples >= 20, w.max(c.error)));
    report(1, ok && r.seconds < 120.0, format!("worst rel err {worst:.2e} (tol 1e-4 / 1e-3), {:.1} s (limit 120 s)", r.seconds))
}

// 2. Backward Euler against its closed form.
fn integrator() -> Outcome {
    let (m, g, h) = (1.5, -9.81, 1.0 / 30.0);
    let mut sim = Simulable::new(ParticleModel::new(vec![m]), h, NewtonSettings::default(), &[]).unwrap();
    sim.add_term(Box::new(ConstantForce { force: vec![m * g] }));
    let (mut x, mut v, mut err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        sim.step().unwrap();
        v += h * g;
        x += h * v;
        err = err.max((sim.state().q[0] - x).abs());
    }
    let mut free = Simulable::new(ParticleModel::with_initial(vec![2.0, 0.5, 1.0], vec![0.1, -0.3, 2.0]), h, NewtonSettings::default(), &[]).unwrap();
    free.set_velocity(&[1.0, 4.0, -2.5]).unwrap();
    let q0 = free.state().q.clone();
    free.step().unwrap();
    let zero = free
        .state()
        .q
        .iter()
        .zip(&q0)
        .zip([1.0, 4.0, -2.5])
        .map(|((q, q0), v)| (q - (q0 + h * v)).abs())
        .fold(0.0, f64::max);
    report(2, err < 1e-8 && zero < 1e-10, format!("free fall err {err:.2e} (tol 1e-8), V=0 err {zero:.2e} (tol 1e-10)"))
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let w = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    *Quat::from_scaled_axis(w).to_rotation_matrix().matrix()
}

// 3. Rest, rotation and translation invariance of the elastic energy.
fn invariances(t: &BodyTemplate) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mat = ElementMaterial::orthotropic(random_rotation(&mut rng), [2e4, 2e4, 6e4], 0.45, 0.5, 2e-3, 1050.0).unwrap();
    let rest = strain_energy_density(&Mat3::identity(), &mat, 0).unwrap().abs();
    let mut rot: f64 = 0.0;
    for _ in 0..100 {
        let f = Mat3::identity() + Mat3::from_fn(|_, _| rng.random_range(-0.3..0.3));
        let r = random_rotation(&mut rng);
        let a = strain_energy_density(&f, &mat, 0).unwrap();
        let b = strain_energy_density(&(r * f), &mat, 0).unwrap();
        rot = rot.max((a - b).abs() / a.abs().max(1.0));
    }
    let mats = t.tets.iter().map(|_| mat.clone()).collect();
    let mesh = FemMesh::new(&t.tet_vertices, &t.tets, mats).unwrap();
    let shift = [0.3, -1.2, 0.7];
    let u: Vec<f64> = (0..3 * mesh.n_vertices).map(|i| shift[i % 3]).collect();
    let trans = mesh.energy(&u).unwrap().abs();
    report(
        3,
        rest == 0.0 && rot < 1e-10 && trans < 1e-12,
        format!("psi(I) {rest:.1e}, rotation err {rot:.2e} (tol 1e-10), translation energy {trans:.2e} (tol 1e-12)"),
    )
}

// 4. Reduced energy equals the projected full energy; cubature generalizes.
fn subspace(rom: &AvatarModel) -> Outcome {
    let SoftLayer::Rom(layer) = &rom.soft else { panic!("not a reduced model") };
    let (fem, basis) = (&layer.mesh, &layer.basis);
    let states = sample_states(fem, basis, 20, 0.15, 0xacce).unwrap();
    let mut proj: f64 = 0.0;
    let mut cub: f64 = 0.0;
    for z in &states {
        let u = basis.displacement(z).unwrap();
        let (e_full, g_full, _) = fem.assemble(&u, false, false).unwrap();
        let g_proj = basis.project_vector(&g_full);
        let (e, g, _) = reduced_elastic(fem, basis, None, z, false, false).unwrap();
        let gs = g_proj.iter().map(|x| x.abs()).fold(0.0, f64::max);
        proj = proj.max((e - e_full).abs() / e_full.abs());
        for (a, b) in g.iter().zip(&g_proj) {
            proj = proj.max((a - b).abs() / gs);
        }
        let (ec, _, _) = reduced_elastic(fem, basis, layer.elastic_cubature.as_ref(), z, false, false).unwrap();
        cub = cub.max((ec - e_full).abs() / e_full.abs());
    }
    let points = layer.elastic_cubature.as_ref().map_or(0, |c| c.len());
    report(
        4,
        proj < 1e-10 && cub <= 0.05,
        format!("projection err {proj:.2e} (tol 1e-10), cubature held-out err {cub:.4} over 20 states with {points} elements (tol 0.05)"),
    )
}

struct Press {
    total: Vec<Vec3>,
    belly: usize,
    skeletal: f64,
}

fn press(model: &AvatarModel, settings: &SimulationSettings, sphere: &Collider, belly: usize) -> Press {
    let mocap = MocapSequence::constant(Pose::identity(model.n_bones()), 30.0, 1).unwrap();
    let mut free = make_simulable(model.clone(), settings, Some(&mocap), &[]).unwrap();
    free.static_solve().unwrap();
    let mut sim = make_simulable(model.clone(), settings, Some(&mocap), std::slice::from_ref(sphere)).unwrap();
    let rep = sim.static_solve().unwrap();
    assert!(rep.converged, "{} press did not converge", model.kind());
    let v = model.surface[belly];
    let skin = |s: &Simulable<AvatarModel>| s.config().skin.skin_point(&model.rest[v], &model.weights[v]);
    Press {
        total: sim.nodes().iter().zip(free.nodes()).map(|(a, b)| a - b).collect(),
        belly,
        skeletal: (skin(&sim) - skin(&free)).norm(),
    }
}

// 5 and 6. Static sphere press on the belly and the two-avatar scene.
fn presses(t: &BodyTemplate, models: &[(AvatarModel, SimulationSettings); 3]) -> (Outcome, Outcome) {
    let start = Instant::now();
    let (mut belly, mut z) = (0, f64::MIN);
    for (i, &v) in t.surface_to_tet.iter().enumerate() {
        let p = t.tet_vertices[v];
        if p.x.abs() < 0.03 && (p.y - 1.22).abs() < 0.03 && p.z > z {
            (belly, z) = (i, p.z);
        }
    }
    let r = 0.06;
    let sphere = Collider::new(Shape::Sphere {
        center: [0.0, 1.22, z + r - 0.02],
        radius: r,
    });
    let runs: Vec<Press> = models.iter().map(|(m, s)| press(m, s, &sphere, belly)).collect();
    let [art, fem, rom] = &runs[..] else { unreachable!() };
    let n = fem.total.len() as f64;
    let rms = (fem.total.iter().zip(&rom.total).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / n).sqrt();
    let peak = fem.total.iter().map(|d| d.norm()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let c5 = report(5, rms <= 0.15 * peak && secs < 300.0, format!("rms(rom-fem) / peak fem = {:.3} (tol 0.15), {secs:.1} s", rms / peak));

    let surf = |p: &Press| p.total[p.belly].norm();
    let soft_ok = [fem, rom].iter().all(|p| surf(p) > surf(art) && p.skeletal < art.skeletal);
    let (with, without) = two_avatars(t);
    let c6 = report(
        6,
        soft_ok && with < 1e-3 && without >= 10.0 * with,
        format!(
            "surface art/fem/rom {:.2e}/{:.2e}/{:.2e}, skeletal {:.2e}/{:.2e}/{:.2e}; overlap {with:.2e} with contact (tol 1e-3), {without:.2e} without",
            surf(art),
            surf(fem),
            surf(rom),
            art.skeletal,
            fem.skeletal,
            rom.skeletal
        ),
    );
    (c5, c6)
}

fn placed(model: &AvatarModel, s: &SimulationSettings, offset: Vec3, yaw: f64) -> Simulable<AvatarModel> {
    let mut pose = Pose::identity(model.n_bones());
    pose.root = RigidTransform::new(Quat::from_scaled_axis(Vec3::new(0.0, yaw, 0.0)), offset);
    let (anchor, q) = model.state_for_pose(&pose).unwrap();
    let mut sim = make_simulable(model.clone(), s, None, &[]).unwrap();
    let n = q.len();
    sim.set_state(SimState {
        q,
        v: vec![0.0; n],
        anchor,
        time: 0.0,
    })
    .unwrap();
    sim
}

fn two_avatars(t: &BodyTemplate) -> (f64, f64) {
    let mut s = SimulationSettings::articulated();
    s.gravity = [0.0; 3];
    let model = AvatarModel::build(t, &s, &AvatarOptions::default()).unwrap();
    let run = |stiffness: f64| {
        let avatars = vec![placed(&model, &s, Vec3::zeros(), 0.0), placed(&model, &s, Vec3::new(0.12, 0.0, 0.08), 0.4)];
        let mut scene = Scene::new(avatars, stiffness, s.newton.clone());
        for _ in 0..10 {
            scene.step().unwrap();
        }
        scene.max_penetration()
    };
    (run(s.stiffness.avatar_contact), run(0.0))
}

// 7. Generation and step timing orderings.
fn timings(t: &BodyTemplate) -> Outcome {
    let table = run_benchmark(t, &AvatarOptions::default(), 5, 0).unwrap();
    print!("{}", table.to_text());
    let speedup = table.reduced_speedup();
    report(
        7,
        table.step_order_holds() && table.generation_order_holds() && speedup >= 10.0,
        format!(
            "step order {}, generation order {}, rom speedup {speedup:.1}x (min 10x)",
            table.step_order_holds(),
            table.generation_order_holds()
        ),
    )
}

// 8. Tracking a constant target plus the bookkeeping suites.
fn tracking(t: &BodyTemplate, r: &ValidationReport) -> Outcome {
    let mut s = SimulationSettings::articulated();
    s.gravity = [0.0; 3];
    s.stiffness.tracking = 1e5;
    s.stiffness.root_rotation = 1e5;
    let model = AvatarModel::build(t, &s, &AvatarOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut target = Pose::identity(model.n_bones());
    for j in &mut target.joint_rotations {
        *j = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    }
    let mocap = MocapSequence::constant(target.clone(), 30.0, 1).unwrap();
    let mut sim = make_simulable(model, &s, Some(&mocap), &[]).unwrap();
    for _ in 0..60 {
        sim.step().unwrap();
    }
    let (pose, _) = sim.model().pose_jacobian(sim.config()).unwrap();
    let pose = Pose::from_vector(&pose).unwrap();
    let err = pose
        .joint_rotations
        .iter()
        .zip(&target.joint_rotations)
        .map(|(a, b)| (Quat::from_scaled_axis(*b).inverse() * Quat::from_scaled_axis(*a)).angle())
        .fold(0.0, f64::max);
    let (pou, _) = check(r, "skinning.partition_of_unity");
    let (det, _) = check(r, "state.determinism");
    let (stack, _) = check(r, "state.stack_round_trip");
    report(
        8,
        err < 1e-4 && pou && det && stack,
        format!("joint error {err:.2e} rad (tol 1e-4), partition of unity {pou}, determinism {det}, stack round trip {stack}"),
    )
}

#[test]
fn acceptance() {
    let t = generate_synthetic_body(&BodyConfig::humanoid(), 0).unwrap();
    let validation = run_validation(0, 20).unwrap();
    let opts = AvatarOptions::default();
    let models = [SimulationSettings::articulated(), SimulationSettings::fem(), SimulationSettings::rom()].map(|mut s| {
        s.gravity = [0.0; 3];
        (AvatarModel::build(&t, &s, &opts).unwrap(), s)
    });

    let mut outcomes = vec![gradients(&validation), integrator(), invariances(&t), subspace(&models[2].0)];
    let (c5, c6) = presses(&t, &models);
    outcomes.extend([c5, c6, timings(&t), tracking(&t, &validation)]);

    let failed: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(|o| format!("{}: {}", o.id, o.detail)).collect();
    println!("{} of {} criteria pass", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
