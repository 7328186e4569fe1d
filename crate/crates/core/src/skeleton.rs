//! Articulated skeleton terms: rigid-body inertia, joint attachment springs,
//! tracking rotation springs and bone gravity. All functions read bone
//! frames and address the bone DoF block `6 b .. 6 b + 6`.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Matrix3x6, Matrix6};
use serde::{Deserialize, Serialize};

use crate::body::Bone;
use crate::error::{check_len, Error, Result};
use crate::kinematics::{forward_kinematics, rest_offset, BoneFrame, Pose, BONE_DOFS};
use crate::math::{exp_so3, log_so3, right_jacobian_inv, skew, Mat3, Vec3};
use crate::sim::{Accumulator, HessianBuilder};
use crate::sparse::TripletMatrix;

/// Spring tying a point of the parent bone to a point of the child bone.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSpec {
    pub parent: usize,
    pub child: usize,
    /// Attachment point in the parent bone frame.
    pub parent_anchor: Vec3,
    /// Attachment point in the child bone frame.
    pub child_anchor: Vec3,
    pub stiffness: f64,
}

/// One joint per non-root bone, attached at the child's head.
pub fn joints_from_bones(bones: &[Bone], stiffness: f64) -> Result<Vec<JointSpec>> {
    if !(stiffness > 0.0) {
        return Err(Error::InvalidConfig(format!("joint stiffness {stiffness} must be positive")));
    }
    let mut out = Vec::with_capacity(bones.len().saturating_sub(1));
    for (c, bone) in bones.iter().enumerate() {
        let Some(p) = bone.parent else { continue };
        let parent_rest = &bones[p].rest_transform;
        out.push(JointSpec {
            parent: p,
            child: c,
            parent_anchor: parent_rest.rotation_matrix().transpose() * (bone.head - parent_rest.translation),
            child_anchor: Vec3::zeros(),
            stiffness,
        });
    }
    Ok(out)
}

/// Rigid 6x6 block of one bone in `[w, t]` coordinates, `t` at the head.
///
/// With `r = R c` the world COM offset and `A` the left Jacobian of the
/// rotation increment, the COM velocity is `t' - [r] A w'` and the angular
/// velocity is `A w'`.
pub fn rigid_mass_block(bone: &Bone, frame: &BoneFrame) -> Matrix6<f64> {
    let m = bone.mass;
    let r = frame.rotation * bone.center_of_mass;
    let rx = skew(&r);
    let a = frame.left_jacobian;
    let inertia = frame.rotation * bone.inertia_tensor * frame.rotation.transpose();
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(a.transpose() * (inertia - rx * rx * m) * a));
    let cross = -rx * a * m;
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&cross);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&cross.transpose());
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Mat3::identity() * m));
    out
}

/// Block-diagonal rigid mass matrix over all bone DoFs.
pub fn rigid_mass_matrix(bones: &[Bone], frames: &[BoneFrame]) -> TripletMatrix {
    let mut m = TripletMatrix::square(BONE_DOFS * bones.len());
    for (b, (bone, f)) in bones.iter().zip(frames).enumerate() {
        m.push_block(BONE_DOFS * b, BONE_DOFS * b, &rigid_mass_block(bone, f));
    }
    m
}

pub fn add_rigid_mass(bones: &[Bone], frames: &[BoneFrame], out: &mut HessianBuilder) {
    for (b, (bone, f)) in bones.iter().zip(frames).enumerate() {
        out.add_block(BONE_DOFS * b, BONE_DOFS * b, &rigid_mass_block(bone, f));
    }
}

/// Scatters `J^T v` of a 3x6 bone-point Jacobian into sparse columns.
fn push_columns(cols: &mut Vec<(usize, f64)>, bone: usize, j: &Matrix3x6<f64>, row: usize, sign: f64) {
    for k in 0..BONE_DOFS {
        let x = j[(row, k)];
        if x != 0.0 {
            cols.push((BONE_DOFS * bone + k, sign * x));
        }
    }
}

/// `V = sum 1/2 k |x_parent - x_child|^2` with a Gauss-Newton Hessian.
pub fn joint_energy(joints: &[JointSpec], frames: &[BoneFrame], out: &mut Accumulator) {
    let mut cols = Vec::with_capacity(2 * BONE_DOFS);
    for j in joints {
        let fp = &frames[j.parent];
        let fc = &frames[j.child];
        let d = (fp.rotation * j.parent_anchor + fp.translation) - (fc.rotation * j.child_anchor + fc.translation);
        out.value += 0.5 * j.stiffness * d.norm_squared();
        if !out.wants_gradient() {
            continue;
        }
        let jp = fp.point_jacobian(&j.parent_anchor);
        let jc = fc.point_jacobian(&j.child_anchor);
        for axis in 0..3 {
            cols.clear();
            push_columns(&mut cols, j.parent, &jp, axis, 1.0);
            push_columns(&mut cols, j.child, &jc, axis, -1.0);
            out.add_gauss_newton(&cols, j.stiffness * d[axis], j.stiffness);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingSpec {
    /// Per-joint rotation spring (N m/rad), one per non-root bone.
    pub joint_stiffness: Vec<f64>,
    pub root_rotation: f64,
    /// Spring on the root bone head position (N/m).
    pub root_translation: f64,
}

impl TrackingSpec {
    pub fn uniform(n_bones: usize, joint: f64, root_rotation: f64, root_translation: f64) -> Self {
        Self {
            joint_stiffness: vec![joint; n_bones.saturating_sub(1)],
            root_rotation,
            root_translation,
        }
    }

    pub fn validate(&self, n_bones: usize) -> Result<()> {
        check_len("tracking stiffnesses", n_bones.saturating_sub(1), self.joint_stiffness.len())?;
        let all = self.joint_stiffness.iter().chain([&self.root_rotation, &self.root_translation]);
        if all.into_iter().any(|k| !(*k >= 0.0)) {
            return Err(Error::InvalidConfig("tracking stiffnesses must be non-negative".into()));
        }
        Ok(())
    }
}

/// A target configuration in the form the springs compare against.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingTarget {
    /// Root rotation relative to its rest orientation.
    pub root_rotation: Mat3,
    /// World position of the root bone head.
    pub root_head: Vec3,
    /// Rotation of each non-root bone relative to its parent's rest offset.
    pub joint_rotations: Vec<Mat3>,
}

impl TrackingTarget {
    pub fn from_pose(bones: &[Bone], pose: &Pose) -> Result<Self> {
        let world = forward_kinematics(bones, pose)?;
        Ok(Self {
            root_rotation: pose.root.rotation_matrix(),
            root_head: world[0].translation,
            joint_rotations: pose.joint_rotations.iter().map(exp_so3).collect(),
        })
    }
}

/// Geodesic residual `log(target^T current)`, clamped just inside the cut
/// locus so the inverse Jacobian stays finite. Returns whether it clamped.
fn rotation_residual(target: &Mat3, current: &Mat3) -> (Vec3, bool) {
    let e = log_so3(&(target.transpose() * current));
    let limit = std::f64::consts::PI - 1e-6;
    let n = e.norm();
    if n > limit {
        (e * (limit / n), true)
    } else {
        (e, false)
    }
}

/// Rotation springs `1/2 k |log(target^T current)|^2` per joint plus a root
/// rotation and root head spring, Gauss-Newton Hessian.
///
/// Returns the number of residuals that sat at angle pi and were evaluated
/// on the clamped branch.
pub fn tracking_energy(
    bones: &[Bone],
    frames: &[BoneFrame],
    spec: &TrackingSpec,
    target: &TrackingTarget,
    out: &mut Accumulator,
) -> usize {
    let mut clamped = 0;
    let mut cols = Vec::with_capacity(2 * BONE_DOFS);

    // Root rotation: perturbing w0 right-multiplies the residual by R_root^T A.
    let r_root = frames[0].rotation * bones[0].rest_transform.rotation_matrix().transpose();
    let (e, c) = rotation_residual(&target.root_rotation, &r_root);
    clamped += c as usize;
    let k = spec.root_rotation;
    if k > 0.0 {
        out.value += 0.5 * k * e.norm_squared();
        if out.wants_gradient() {
            let d = right_jacobian_inv(&e) * r_root.transpose() * frames[0].left_jacobian;
            for row in 0..3 {
                cols.clear();
                cols.extend((0..3).map(|a| (a, d[(row, a)])));
                out.add_gauss_newton(&cols, k * e[row], k);
            }
        }
    }
    let k = spec.root_translation;
    if k > 0.0 {
        let d = frames[0].translation - target.root_head;
        out.value += 0.5 * k * d.norm_squared();
        for axis in 0..3 {
            out.add_gauss_newton(&[(3 + axis, 1.0)], k * d[axis], k);
        }
    }

    for i in 1..bones.len() {
        let k = spec.joint_stiffness[i - 1];
        if k == 0.0 {
            continue;
        }
        let p = bones[i].parent.expect("validated tree");
        let offset = rest_offset(bones, i).rotation_matrix();
        let local = offset.transpose() * frames[p].rotation.transpose() * frames[i].rotation;
        let (e, c) = rotation_residual(&target.joint_rotations[i - 1], &local);
        clamped += c as usize;
        out.value += 0.5 * k * e.norm_squared();
        if !out.wants_gradient() {
            continue;
        }
        let base = right_jacobian_inv(&e) * frames[i].rotation.transpose();
        let di = base * frames[i].left_jacobian;
        let dp = -base * frames[p].left_jacobian;
        for row in 0..3 {
            cols.clear();
            cols.extend((0..3).map(|a| (BONE_DOFS * i + a, di[(row, a)])));
            cols.extend((0..3).map(|a| (BONE_DOFS * p + a, dp[(row, a)])));
            out.add_gauss_newton(&cols, k * e[row], k);
        }
    }
    clamped
}

/// Counts residuals evaluated on the clamped branch across calls.
#[derive(Debug, Default)]
pub struct BranchWarnings(AtomicUsize);

impl BranchWarnings {
    pub fn add(&self, n: usize) {
        if n > 0 {
            self.0.fetch_add(n, Ordering::Relaxed);
        }
    }

    pub fn count(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }
}

/// `V = -sum m_b g . (R_b c_b + t_b)`; the Hessian is dropped (zero).
pub fn bone_gravity_energy(bones: &[Bone], frames: &[BoneFrame], gravity: &Vec3, out: &mut Accumulator) {
    for (b, (bone, f)) in bones.iter().zip(frames).enumerate() {
        let x = f.rotation * bone.center_of_mass + f.translation;
        out.value -= bone.mass * gravity.dot(&x);
        if out.wants_gradient() {
            let g = f.point_jacobian(&bone.center_of_mass).transpose() * gravity * (-bone.mass);
            for k in 0..BONE_DOFS {
                out.gradient[BONE_DOFS * b + k] += g[k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{generate_synthetic_body, BodyConfig, BodyTemplate};
    use crate::kinematics::{bone_dofs_from_transforms, bone_frames, RigidTransform};
    use crate::math::{rel_err, Quat};
    use crate::sim::Level;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rest(body: &BodyTemplate) -> (Vec<Quat>, Vec<f64>) {
        let world: Vec<RigidTransform> = body.bones.iter().map(|b| b.rest_transform).collect();
        bone_dofs_from_transforms(&world)
    }

    fn perturb(q: &[f64], rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
        q.iter().map(|x| x + rng.random_range(-scale..scale)).collect()
    }

    fn eval<F: Fn(&[BoneFrame], &mut Accumulator)>(base: &[Quat], q: &[f64], level: Level, f: &F) -> Accumulator {
        let frames = bone_frames(base, q);
        let mut acc = Accumulator::new(q.len(), q.len(), level);
        f(&frames, &mut acc);
        acc
    }

    /// Central differences of value and gradient against the analytic
    /// gradient (and Hessian when `exact_hessian`).
    fn fd_check<F: Fn(&[BoneFrame], &mut Accumulator)>(base: &[Quat], q: &[f64], f: F, exact_hessian: bool) {
        let acc = eval(base, q, Level::Hessian, &f);
        let h = acc.hessian.clone().finish().to_dense();
        let eps = 1e-6;
        for i in 0..q.len() {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += eps;
            qm[i] -= eps;
            let ap = eval(base, &qp, Level::Gradient, &f);
            let am = eval(base, &qm, Level::Gradient, &f);
            let fd = (ap.value - am.value) / (2.0 * eps);
            let scale = acc.gradient.iter().fold(1e-8_f64, |m, x| m.max(x.abs()));
            assert!(rel_err(acc.gradient[i], fd, scale) < 1e-4, "dof {i}: {} vs {fd}", acc.gradient[i]);
            if exact_hessian {
                for j in 0..q.len() {
                    let fdh = (ap.gradient[j] - am.gradient[j]) / (2.0 * eps);
                    let hs = h.iter().fold(1e-8_f64, |m, x| m.max(x.abs()));
                    assert!(rel_err(h[(j, i)], fdh, hs) < 1e-3, "H[{j},{i}]");
                }
            }
        }
    }

    fn arm() -> BodyTemplate {
        generate_synthetic_body(&BodyConfig::arm(), 1).unwrap()
    }

    #[test]
    fn point_mass_block() {
        let mut bone = arm().bones[0].clone();
        bone.mass = 2.0;
        bone.center_of_mass = Vec3::zeros();
        bone.inertia_tensor = Mat3::identity() * 1e-12;
        let frames = bone_frames(&[Quat::identity()], &[0.0; 6]);
        let m = rigid_mass_block(&bone, &frames[0]);
        assert_eq!(m.fixed_view::<3, 3>(3, 3).into_owned(), Mat3::identity() * 2.0);
        assert!(m.fixed_view::<3, 3>(0, 3).norm() == 0.0);
    }

    #[test]
    fn box_bone_mass_matches_analytic_inertia() {
        let (a, b, c, m) = (0.1, 0.2, 0.4, 3.0);
        let box_inertia = Mat3::from_diagonal(&Vec3::new(
            m / 12.0 * (b * b + c * c),
            m / 12.0 * (a * a + c * c),
            m / 12.0 * (a * a + b * b),
        ));
        let mut bone = arm().bones[0].clone();
        bone.mass = m;
        bone.center_of_mass = Vec3::zeros();
        bone.inertia_tensor = box_inertia;
        let frames = bone_frames(&[Quat::identity()], &[0.0; 6]);
        let blk = rigid_mass_block(&bone, &frames[0]);
        assert!((blk.fixed_view::<3, 3>(0, 0) - box_inertia).norm() < 1e-12);
        // Offset COM: parallel-axis theorem about the head.
        bone.center_of_mass = Vec3::new(0.0, 0.0, 0.3);
        let blk = rigid_mass_block(&bone, &frames[0]);
        let expect = box_inertia + Mat3::from_diagonal(&Vec3::new(m * 0.09, m * 0.09, 0.0));
        assert!((blk.fixed_view::<3, 3>(0, 0) - expect).norm() < 1e-12);
    }

    #[test]
    fn rigid_mass_is_kinetic_energy_of_points() {
        // Oracle: kinetic energy of the bone's own COM and inertia, sampled
        // from a finite-difference velocity of the world frame.
        let body = arm();
        let (base, q0) = rest(&body);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = perturb(&q0, &mut rng, 0.4);
        let qd: Vec<f64> = (0..q.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let frames = bone_frames(&base, &q);
        let m = rigid_mass_matrix(&body.bones, &frames);
        let ke = 0.5 * m.bilinear(&qd, &qd);
        let dt = 1e-6;
        let qn: Vec<f64> = q.iter().zip(&qd).map(|(a, b)| a + dt * b).collect();
        let fn_ = bone_frames(&base, &qn);
        let mut oracle = 0.0;
        for (b, bone) in body.bones.iter().enumerate() {
            let x0 = frames[b].rotation * bone.center_of_mass + frames[b].translation;
            let x1 = fn_[b].rotation * bone.center_of_mass + fn_[b].translation;
            let v = (x1 - x0) / dt;
            let omega = log_so3(&(fn_[b].rotation * frames[b].rotation.transpose())) / dt;
            let iw = frames[b].rotation * bone.inertia_tensor * frames[b].rotation.transpose();
            oracle += 0.5 * bone.mass * v.norm_squared() + 0.5 * omega.dot(&(iw * omega));
        }
        assert!(rel_err(ke, oracle, 1e-6) < 1e-4, "{ke} vs {oracle}");
        let total: f64 = body.bones.iter().map(|b| b.mass).sum();
        let trans: f64 = (0..body.bones.len()).map(|b| m.to_dense()[(6 * b + 3, 6 * b + 3)]).sum();
        assert!((trans - total).abs() < 1e-12 * total);
    }

    #[test]
    fn joint_energy_rest_and_translation() {
        let body = arm();
        let (base, q0) = rest(&body);
        let joints = joints_from_bones(&body.bones, 100.0).unwrap();
        let f = |fr: &[BoneFrame], acc: &mut Accumulator| joint_energy(&joints, fr, acc);
        let acc = eval(&base, &q0, Level::Gradient, &f);
        assert!(acc.value.abs() < 1e-20);
        let mut q = q0.clone();
        let d = Vec3::new(0.01, -0.02, 0.005);
        for k in 0..3 {
            q[6 + 3 + k] += d[k];
        }
        let acc = eval(&base, &q, Level::Value, &f);
        assert!((acc.value - 50.0 * d.norm_squared()).abs() < 1e-15);
        assert!(joints_from_bones(&body.bones, 0.0).is_err());
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        let body = generate_synthetic_body(&BodyConfig::humanoid(), 2).unwrap();
        let (base, q0) = rest(&body);
        let joints = joints_from_bones(&body.bones, 1e3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = perturb(&q0, &mut rng, 0.3);
        fd_check(&base, &q, |fr, acc| joint_energy(&joints, fr, acc), false);
    }

    #[test]
    fn joint_energy_is_rigid_invariant() {
        let body = generate_synthetic_body(&BodyConfig::humanoid(), 2).unwrap();
        let (base, q0) = rest(&body);
        let joints = joints_from_bones(&body.bones, 1e3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = perturb(&q0, &mut rng, 0.2);
        let frames = bone_frames(&base, &q);
        let g = RigidTransform::new(Quat::from_scaled_axis(Vec3::new(0.3, -1.1, 0.7)), Vec3::new(1.0, 2.0, -3.0));
        let moved: Vec<RigidTransform> = frames.iter().map(|f| g.compose(&f.transform())).collect();
        let (base2, q2) = bone_dofs_from_transforms(&moved);
        let a = eval(&base, &q, Level::Value, &|fr: &[BoneFrame], acc: &mut Accumulator| joint_energy(&joints, fr, acc));
        let b = eval(&base2, &q2, Level::Value, &|fr: &[BoneFrame], acc: &mut Accumulator| joint_energy(&joints, fr, acc));
        assert!((a.value - b.value).abs() < 1e-10);
    }

    #[test]
    fn tracking_zero_at_target_and_single_joint_value() {
        let body = arm();
        let (base, q0) = rest(&body);
        let spec = TrackingSpec::uniform(2, 10.0, 5.0, 7.0);
        let target = TrackingTarget::from_pose(&body.bones, &Pose::identity(2)).unwrap();
        let f = |fr: &[BoneFrame], acc: &mut Accumulator| {
            tracking_energy(&body.bones, fr, &spec, &target, acc);
        };
        let acc = eval(&base, &q0, Level::Gradient, &f);
        assert!(acc.value.abs() < 1e-24);
        assert!(acc.gradient.iter().all(|g| g.abs() < 1e-12));
        let mut q = q0.clone();
        q[6 + 2] = 0.2;
        let acc = eval(&base, &q, Level::Value, &f);
        assert!((acc.value - 0.2).abs() < 1e-12, "{}", acc.value);
    }

    #[test]
    fn tracking_derivatives_match_finite_differences() {
        let body = generate_synthetic_body(&BodyConfig::humanoid(), 2).unwrap();
        let (base, q0) = rest(&body);
        let n = body.bones.len();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut spec = TrackingSpec::uniform(n, 0.0, 30.0, 50.0);
        for k in spec.joint_stiffness.iter_mut() {
            *k = rng.random_range(1.0..20.0);
        }
        let pv: Vec<f64> = (0..Pose::dimension(n)).map(|_| rng.random_range(-0.5..0.5)).collect();
        let target = TrackingTarget::from_pose(&body.bones, &Pose::from_vector(&pv).unwrap()).unwrap();
        let q = perturb(&q0, &mut rng, 0.4);
        fd_check(
            &base,
            &q,
            |fr, acc| {
                tracking_energy(&body.bones, fr, &spec, &target, acc);
            },
            false,
        );
        // At the target the residual vanishes, so Gauss-Newton is exact.
        let world = forward_kinematics(&body.bones, &Pose::from_vector(&pv).unwrap()).unwrap();
        let (base_t, q_t) = bone_dofs_from_transforms(&world);
        let f = |fr: &[BoneFrame], acc: &mut Accumulator| {
            tracking_energy(&body.bones, fr, &spec, &target, acc);
        };
        assert!(eval(&base_t, &q_t, Level::Value, &f).value < 1e-20);
        fd_check(&base_t, &q_t, f, true);
    }

    #[test]
    fn tracking_at_half_turn_is_clamped_and_finite() {
        let body = arm();
        let (base, q0) = rest(&body);
        let spec = TrackingSpec::uniform(2, 1.0, 0.0, 0.0);
        let target = TrackingTarget::from_pose(&body.bones, &Pose::identity(2)).unwrap();
        let mut q = q0.clone();
        q[6] = std::f64::consts::PI;
        let frames = bone_frames(&base, &q);
        let mut acc = Accumulator::new(q.len(), q.len(), Level::Hessian);
        let n = tracking_energy(&body.bones, &frames, &spec, &target, &mut acc);
        assert_eq!(n, 1);
        assert!(acc.value.is_finite() && acc.gradient.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn bone_gravity_gradient() {
        let body = generate_synthetic_body(&BodyConfig::humanoid(), 2).unwrap();
        let (base, q0) = rest(&body);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = perturb(&q0, &mut rng, 0.5);
        let g = Vec3::new(0.0, -9.81, 0.0);
        fd_check(&base, &q, |fr, acc| bone_gravity_energy(&body.bones, fr, &g, acc), false);
        let mut acc = Accumulator::new(q0.len(), 0, Level::Gradient);
        bone_gravity_energy(&body.bones, &bone_frames(&base, &q0), &g, &mut acc);
        let total: f64 = body.bones.iter().map(|b| b.mass).sum();
        let fy: f64 = (0..body.bones.len()).map(|b| acc.gradient[6 * b + 4]).sum();
        assert!((fy - total * 9.81).abs() < 1e-9 * total);
    }
}
