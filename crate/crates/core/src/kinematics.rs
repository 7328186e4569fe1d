//! Rigid bone transforms, forward kinematics, linear blend skinning, pose
//! extraction and the skinning Jacobian.
//!
//! DoF layout per bone is `[rx ry rz tx ty tz]`: a world-frame rotation
//! increment on top of a committed base quaternion, and the world position
//! of the bone origin (its head).

use nalgebra::{Matrix3x6, Matrix4, UnitQuaternion};

use crate::body::{Bone, SkinWeights};
use crate::error::{check_len, Error, Result};
use crate::math::{exp_so3, left_jacobian, left_jacobian_inv, log_quat, right_jacobian_inv, skew, Mat3, Quat, Vec3};
use crate::sparse::TripletMatrix;

pub const BONE_DOFS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Quat::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Quat::identity(), t)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.rotation.quaternion().norm() - 1.0).abs() <= tol
    }
}

/// Root transform plus one exponential-coordinate rotation per non-root bone
/// (`joint_rotations[i - 1]` belongs to bone `i`).
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub root: RigidTransform,
    pub joint_rotations: Vec<Vec3>,
}

impl Pose {
    pub fn identity(n_bones: usize) -> Self {
        Self {
            root: RigidTransform::identity(),
            joint_rotations: vec![Vec3::zeros(); n_bones.saturating_sub(1)],
        }
    }

    /// Length of [`Pose::to_vector`]: 6 root values plus 3 per joint.
    pub fn dimension(n_bones: usize) -> usize {
        6 + 3 * n_bones.saturating_sub(1)
    }

    /// `[root exp-coords, root translation, joint exp-coords...]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(6 + 3 * self.joint_rotations.len());
        v.extend_from_slice(log_quat(&self.root.rotation).as_slice());
        v.extend_from_slice(self.root.translation.as_slice());
        for j in &self.joint_rotations {
            v.extend_from_slice(j.as_slice());
        }
        v
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.len() < 6 || !(v.len() - 6).is_multiple_of(3) {
            return Err(Error::InvalidConfig(format!("pose vector length {} is not 6 + 3k", v.len())));
        }
        let root = RigidTransform::new(
            Quat::from_scaled_axis(Vec3::new(v[0], v[1], v[2])),
            Vec3::new(v[3], v[4], v[5]),
        );
        let joint_rotations = v[6..].chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        Ok(Self {
            root,
            joint_rotations,
        })
    }
}

/// Rest transform of bone `i` relative to its parent's rest frame.
pub fn rest_offset(bones: &[Bone], i: usize) -> RigidTransform {
    match bones[i].parent {
        Some(p) => bones[p].rest_transform.inverse().compose(&bones[i].rest_transform),
        None => bones[i].rest_transform,
    }
}

pub fn forward_kinematics(bones: &[Bone], pose: &Pose) -> Result<Vec<RigidTransform>> {
    check_len("pose joint rotations", bones.len().saturating_sub(1), pose.joint_rotations.len())?;
    let mut world: Vec<RigidTransform> = Vec::with_capacity(bones.len());
    for (i, bone) in bones.iter().enumerate() {
        let w = match bone.parent {
            None => pose.root.compose(&bone.rest_transform),
            Some(p) if p < i => {
                let local = RigidTransform::new(
                    Quat::from_scaled_axis(pose.joint_rotations[i - 1]),
                    Vec3::zeros(),
                );
                world[p].compose(&rest_offset(bones, i)).compose(&local)
            }
            Some(p) => {
                return Err(Error::InvariantViolation(format!(
                    "bone {i} has parent {p} that does not precede it"
                )))
            }
        };
        world.push(w);
    }
    Ok(world)
}

/// Projects per-bone world transforms onto a pose. Joint rotations are the
/// relative rotations to the parent; child translations are ignored, so the
/// result is the best tree-consistent reading of free rigid bodies.
pub fn extract_pose(bones: &[Bone], world: &[RigidTransform]) -> Result<Pose> {
    check_len("world transforms", bones.len(), world.len())?;
    let root = world[0].compose(&bones[0].rest_transform.inverse());
    let mut joint_rotations = Vec::with_capacity(bones.len().saturating_sub(1));
    for i in 1..bones.len() {
        let p = bones[i].parent.ok_or_else(|| {
            Error::InvariantViolation(format!("bone {i} has no parent but is not the root"))
        })?;
        let offset = rest_offset(bones, i);
        let local = offset.rotation.inverse() * world[p].rotation.inverse() * world[i].rotation;
        joint_rotations.push(principal_log(&local, &bones[i].name)?);
    }
    Ok(Pose {
        root,
        joint_rotations,
    })
}

fn principal_log(q: &Quat, name: &str) -> Result<Vec3> {
    let w = log_quat(q);
    if w.norm() > std::f64::consts::PI - 1e-7 {
        return Err(Error::LogBranch(name.to_string()));
    }
    Ok(w)
}

/// Per-bone world frame at a DoF vector: `R = exp(w) R0`, `t` taken directly.
#[derive(Clone, Debug)]
pub struct BoneFrame {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub increment: Vec3,
    pub left_jacobian: Mat3,
}

impl BoneFrame {
    pub fn transform(&self) -> RigidTransform {
        let rot = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(self.rotation));
        RigidTransform::new(rot, self.translation)
    }

    /// Derivative of the world point `R a + t` with respect to `[w, t]`.
    pub fn point_jacobian(&self, local: &Vec3) -> Matrix3x6<f64> {
        let y = self.rotation * local;
        let mut j = Matrix3x6::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&y) * self.left_jacobian));
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
        j
    }
}

pub fn bone_frames(base_rotations: &[Quat], q: &[f64]) -> Vec<BoneFrame> {
    base_rotations
        .iter()
        .enumerate()
        .map(|(i, base)| {
            let o = i * BONE_DOFS;
            let w = Vec3::new(q[o], q[o + 1], q[o + 2]);
            BoneFrame {
                rotation: exp_so3(&w) * base.to_rotation_matrix().into_inner(),
                translation: Vec3::new(q[o + 3], q[o + 4], q[o + 5]),
                increment: w,
                left_jacobian: left_jacobian(&w),
            }
        })
        .collect()
}

/// Flat DoF block for bones at the given transforms with zero increments.
pub fn bone_dofs_from_transforms(world: &[RigidTransform]) -> (Vec<Quat>, Vec<f64>) {
    let mut q = vec![0.0; world.len() * BONE_DOFS];
    for (i, w) in world.iter().enumerate() {
        q[i * BONE_DOFS + 3..i * BONE_DOFS + 6].copy_from_slice(w.translation.as_slice());
    }
    (world.iter().map(|w| w.rotation).collect(), q)
}

/// Skinning transform of each bone, mapping rest-space points to world:
/// `T_i(p) = A_i p + b_i` with `A_i = R_i R_i,rest^T`.
#[derive(Clone, Debug)]
pub struct SkinTransforms {
    pub linear: Vec<Mat3>,
    pub offset: Vec<Vec3>,
}

impl SkinTransforms {
    pub fn new(bones: &[Bone], frames: &[BoneFrame]) -> Self {
        let mut linear = Vec::with_capacity(bones.len());
        let mut offset = Vec::with_capacity(bones.len());
        for (bone, f) in bones.iter().zip(frames) {
            let a = f.rotation * bone.rest_transform.rotation_matrix().transpose();
            offset.push(f.translation - a * bone.rest_transform.translation);
            linear.push(a);
        }
        Self { linear, offset }
    }

    pub fn from_world(bones: &[Bone], world: &[RigidTransform]) -> Self {
        let mut linear = Vec::with_capacity(bones.len());
        let mut offset = Vec::with_capacity(bones.len());
        for (bone, w) in bones.iter().zip(world) {
            let a = w.rotation_matrix() * bone.rest_transform.rotation_matrix().transpose();
            offset.push(w.translation - a * bone.rest_transform.translation);
            linear.push(a);
        }
        Self { linear, offset }
    }

    #[inline]
    pub fn skin_point(&self, p: &Vec3, weights: &[(usize, f64)]) -> Vec3 {
        let mut x = Vec3::zeros();
        for &(b, w) in weights {
            x += (self.linear[b] * p + self.offset[b]) * w;
        }
        x
    }

    /// `sum_i w_i A_i`: maps unposed displacements to world displacements.
    #[inline]
    pub fn rotation_blend(&self, weights: &[(usize, f64)]) -> Mat3 {
        let mut m = Mat3::zeros();
        for &(b, w) in weights {
            m += self.linear[b] * w;
        }
        m
    }
}

/// Linear blend skinning of unposed points (shaped rest plus any
/// displacement and pose-corrective offsets already added).
pub fn skinning(rest: &[Vec3], skin: &SkinTransforms, weights: &SkinWeights) -> Result<Vec<Vec3>> {
    check_len("skinning weights", rest.len(), weights.len())?;
    Ok(rest
        .iter()
        .zip(weights.iter())
        .map(|(p, w)| skin.skin_point(p, w))
        .collect())
}

/// 3x6 Jacobian blocks of a skinned point with respect to each influencing
/// bone's `[w, t]` DoFs. `p` is the unposed position of the point.
pub fn vertex_bone_jacobian(
    bones: &[Bone],
    frames: &[BoneFrame],
    skin: &SkinTransforms,
    p: &Vec3,
    weights: &[(usize, f64)],
) -> Vec<(usize, Matrix3x6<f64>)> {
    weights
        .iter()
        .filter(|(_, w)| *w != 0.0)
        .map(|&(b, w)| {
            let y = skin.linear[b] * (p - bones[b].rest_transform.translation);
            let mut j = Matrix3x6::zeros();
            j.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(-skew(&y) * frames[b].left_jacobian * w));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(Mat3::identity() * w));
            (b, j)
        })
        .collect()
}

/// Sparse `dx/dq` of skinned points over bone DoFs only (3 rows per point,
/// `6 * n_bones` columns).
pub fn skinning_jacobian(
    bones: &[Bone],
    frames: &[BoneFrame],
    unposed: &[Vec3],
    weights: &SkinWeights,
) -> Result<TripletMatrix> {
    check_len("skinning weights", unposed.len(), weights.len())?;
    let skin = SkinTransforms::new(bones, frames);
    let mut jac = TripletMatrix::new(3 * unposed.len(), BONE_DOFS * bones.len());
    for (v, (p, w)) in unposed.iter().zip(weights.iter()).enumerate() {
        for (b, block) in vertex_bone_jacobian(bones, frames, &skin, p, w) {
            jac.push_block(3 * v, BONE_DOFS * b, &block);
        }
    }
    Ok(jac)
}

/// Pose vector (see [`Pose::to_vector`]) read from bone frames, and its
/// Jacobian with respect to bone DoFs as dense per-bone 3x3 blocks.
pub struct PoseJacobian {
    pub pose: Vec<f64>,
    /// `(pose_row, dof_col, value)` entries.
    pub jacobian: TripletMatrix,
}

pub fn pose_with_jacobian(bones: &[Bone], frames: &[BoneFrame]) -> Result<PoseJacobian> {
    let n = bones.len();
    let dim = Pose::dimension(n);
    let mut pose = vec![0.0; dim];
    let mut jac = TripletMatrix::new(dim, BONE_DOFS * n);

    let r0_rest = bones[0].rest_transform.rotation_matrix();
    let r_root = frames[0].rotation * r0_rest.transpose();
    let root_rot = crate::math::log_so3(&r_root);
    if root_rot.norm() > std::f64::consts::PI - 1e-7 {
        return Err(Error::LogBranch(bones[0].name.clone()));
    }
    let t_rest = bones[0].rest_transform.translation;
    let root_t = frames[0].translation - r_root * t_rest;
    pose[0..3].copy_from_slice(root_rot.as_slice());
    pose[3..6].copy_from_slice(root_t.as_slice());
    let jl0 = frames[0].left_jacobian;
    jac.push_block(0, 0, &(left_jacobian_inv(&root_rot) * jl0));
    jac.push_block(3, 0, &(skew(&(r_root * t_rest)) * jl0));
    jac.push_block(3, 3, &Mat3::identity());

    for i in 1..n {
        let p = bones[i].parent.expect("validated tree");
        let offset = rest_offset(bones, i).rotation_matrix();
        let local = offset.transpose() * frames[p].rotation.transpose() * frames[i].rotation;
        let theta = crate::math::log_so3(&local);
        if theta.norm() > std::f64::consts::PI - 1e-7 {
            return Err(Error::LogBranch(bones[i].name.clone()));
        }
        let row = 6 + 3 * (i - 1);
        pose[row..row + 3].copy_from_slice(theta.as_slice());
        let d = right_jacobian_inv(&theta) * frames[i].rotation.transpose();
        jac.push_block(row, BONE_DOFS * i, &(d * frames[i].left_jacobian));
        jac.push_block(row, BONE_DOFS * p, &(-d * frames[p].left_jacobian));
    }
    Ok(PoseJacobian {
        pose,
        jacobian: jac,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{synthetic::generate_synthetic_body, BodyConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> Pose {
        let mut v = vec![0.0; Pose::dimension(n)];
        for x in v.iter_mut() {
            *x = rng.random_range(-scale..scale);
        }
        Pose::from_vector(&v).unwrap()
    }

    #[test]
    fn identity_pose_gives_rest_transforms() {
        let body = generate_synthetic_body(&BodyConfig::arm(), 0).unwrap();
        let world = forward_kinematics(&body.bones, &Pose::identity(body.bones.len())).unwrap();
        for (w, b) in world.iter().zip(&body.bones) {
            assert!((w.to_homogeneous() - b.rest_transform.to_homogeneous()).norm() < 1e-15);
        }
    }

    #[test]
    fn root_translation_moves_every_bone() {
        let body = generate_synthetic_body(&BodyConfig::humanoid(), 0).unwrap();
        let mut pose = Pose::identity(body.bones.len());
        let t = Vec3::new(0.3, -1.0, 2.0);
        pose.root.translation = t;
        let world = forward_kinematics(&body.bones, &pose).unwrap();
        for (w, b) in world.iter().zip(&body.bones) {
            assert!((w.translation - b.rest_transform.translation - t).norm() < 1e-12);
            assert!(w.rotation.angle_to(&b.rest_transform.rotation) < 1e-12);
        }
    }

    #[test]
    fn forward_kinematics_matches_homogeneous_chain() {
        let body = generate_synthetic_body(&BodyConfig::humanoid(), 0).unwrap();
        let n = body.bones.len();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let pose = random_pose(n, &mut rng, 1.0);
            let world = forward_kinematics(&body.bones, &pose).unwrap();
            // Oracle: 4x4 matrices, parent_world * inv(parent_rest) * rest * rot(theta).
            let mut mats: Vec<Matrix4<f64>> = Vec::new();
            for (i, b) in body.bones.iter().enumerate() {
                let m = match b.parent {
                    None => pose.root.to_homogeneous() * b.rest_transform.to_homogeneous(),
                    Some(p) => {
                        let mut rot = Matrix4::identity();
                        rot.fixed_view_mut::<3, 3>(0, 0)
                            .copy_from(&exp_so3(&pose.joint_rotations[i - 1]));
                        mats[p]
                            * body.bones[p].rest_transform.to_homogeneous().try_inverse().unwrap()
                            * b.rest_transform.to_homogeneous()
                            * rot
                    }
                };
                mats.push(m);
            }
            for (w, m) in world.iter().zip(&mats) {
                assert!((w.to_homogeneous() - m).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn extract_pose_round_trip() {
        let body = generate_synthetic_body(&BodyConfig::humanoid(), 0).unwrap();
        let n = body.bones.len();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let pose = random_pose(n, &mut rng, 1.2);
            let world = forward_kinematics(&body.bones, &pose).unwrap();
            let back = extract_pose(&body.bones, &world).unwrap();
            let again = forward_kinematics(&body.bones, &back).unwrap();
            for (a, b) in world.iter().zip(&again) {
                assert!((a.to_homogeneous() - b.to_homogeneous()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn extract_pose_at_rest_and_rigidly_moved() {
        let body = generate_synthetic_body(&BodyConfig::humanoid(), 0).unwrap();
        let rest: Vec<_> = body.bones.iter().map(|b| b.rest_transform).collect();
        let pose = extract_pose(&body.bones, &rest).unwrap();
        assert!(pose.to_vector().iter().all(|x| x.abs() < 1e-12));

        let g = RigidTransform::new(Quat::from_scaled_axis(Vec3::new(0.1, 0.7, -0.2)), Vec3::new(1.0, 2.0, 3.0));
        let moved: Vec<_> = rest.iter().map(|r| g.compose(r)).collect();
        let pose = extract_pose(&body.bones, &moved).unwrap();
        assert!((pose.root.to_homogeneous() - g.to_homogeneous()).norm() < 1e-12);
        assert!(pose.joint_rotations.iter().all(|j| j.norm() < 1e-12));
    }

    #[test]
    fn extract_pose_flags_branch_point() {
        let body = generate_synthetic_body(&BodyConfig::arm(), 0).unwrap();
        let mut pose = Pose::identity(2);
        pose.joint_rotations[0] = Vec3::new(std::f64::consts::PI, 0.0, 0.0);
        let world = forward_kinematics(&body.bones, &pose).unwrap();
        assert!(matches!(extract_pose(&body.bones, &world), Err(Error::LogBranch(_))));
    }

    #[test]
    fn skinning_examples() {
        let body = generate_synthetic_body(&BodyConfig::arm(), 0).unwrap();
        let rest: Vec<_> = body.bones.iter().map(|b| b.rest_transform).collect();
        let skin = SkinTransforms::from_world(&body.bones, &rest);
        let x = skinning(&body.tet_vertices, &skin, &body.skinning_weights).unwrap();
        for (a, b) in x.iter().zip(&body.tet_vertices) {
            assert!((a - b).norm() < 1e-14);
        }

        // Convex combination: weights (0.5, 0.5), bone 0 translated by (2,0,0).
        let mut moved = rest.clone();
        moved[0].translation += Vec3::new(2.0, 0.0, 0.0);
        let skin = SkinTransforms::from_world(&body.bones, &moved);
        let p = Vec3::new(0.1, 0.2, 0.3);
        let x = skin.skin_point(&p, &[(0, 0.5), (1, 0.5)]);
        assert!((x - p - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn rigid_invariance_of_skinning() {
        let body = generate_synthetic_body(&BodyConfig::arm(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = random_pose(2, &mut rng, 0.8);
        let world = forward_kinematics(&body.bones, &pose).unwrap();
        let g = RigidTransform::new(Quat::from_scaled_axis(Vec3::new(-0.4, 0.2, 0.9)), Vec3::new(0.5, -0.1, 0.0));
        let moved: Vec<_> = world.iter().map(|w| g.compose(w)).collect();
        let x = skinning(&body.tet_vertices, &SkinTransforms::from_world(&body.bones, &world), &body.skinning_weights).unwrap();
        let y = skinning(&body.tet_vertices, &SkinTransforms::from_world(&body.bones, &moved), &body.skinning_weights).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((g.apply(a) - b).norm() < 1e-12);
        }
    }

    #[test]
    fn skinning_jacobian_matches_finite_differences() {
        let body = generate_synthetic_body(&BodyConfig::arm(), 0).unwrap();
        let n = body.bones.len();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pose = random_pose(n, &mut rng, 0.6);
        let world = forward_kinematics(&body.bones, &pose).unwrap();
        let (base, mut q) = bone_dofs_from_transforms(&world);
        for x in q.iter_mut().step_by(1) {
            *x += rng.random_range(-0.2..0.2);
        }
        let frames = bone_frames(&base, &q);
        let jac = skinning_jacobian(&body.bones, &frames, &body.tet_vertices, &body.skinning_weights)
            .unwrap()
            .to_dense();
        let eval = |q: &[f64]| {
            let f = bone_frames(&base, q);
            skinning(&body.tet_vertices, &SkinTransforms::new(&body.bones, &f), &body.skinning_weights).unwrap()
        };
        let h = 1e-6;
        for c in 0..q.len() {
            let mut qp = q.clone();
            qp[c] += h;
            let mut qm = q.clone();
            qm[c] -= h;
            let (xp, xm) = (eval(&qp), eval(&qm));
            let mut num = 0.0_f64;
            let mut den = 0.0_f64;
            for v in 0..xp.len() {
                let fd = (xp[v] - xm[v]) / (2.0 * h);
                for k in 0..3 {
                    num = num.max((fd[k] - jac[(3 * v + k, c)]).abs());
                    den = den.max(fd[k].abs());
                }
            }
            assert!(num / den.max(1e-12) < 1e-5, "column {c}: {}", num / den);
        }
    }

    #[test]
    fn jacobian_block_structure() {
        let body = generate_synthetic_body(&BodyConfig::arm(), 0).unwrap();
        let (base, q) = bone_dofs_from_transforms(&body.bones.iter().map(|b| b.rest_transform).collect::<Vec<_>>());
        let frames = bone_frames(&base, &q);
        let jac = skinning_jacobian(&body.bones, &frames, &body.tet_vertices, &body.skinning_weights)
            .unwrap()
            .to_dense();
        for (v, w) in body.skinning_weights.iter().enumerate() {
            for b in 0..n_bones(&body.bones) {
                let weight = w.iter().find(|(i, _)| *i == b).map(|x| x.1).unwrap_or(0.0);
                let block = jac.view((3 * v, 6 * b), (3, 6));
                if weight == 0.0 {
                    assert_eq!(block.norm(), 0.0);
                } else {
                    let t = block.view((0, 3), (3, 3));
                    assert!((t - Mat3::identity() * weight).norm() < 1e-15);
                }
            }
        }
    }

    fn n_bones(b: &[Bone]) -> usize {
        b.len()
    }

    #[test]
    fn pose_jacobian_matches_finite_differences() {
        let body = generate_synthetic_body(&BodyConfig::humanoid(), 0).unwrap();
        let n = body.bones.len();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_pose(n, &mut rng, 0.7);
        let world = forward_kinematics(&body.bones, &pose).unwrap();
        let (base, mut q) = bone_dofs_from_transforms(&world);
        for x in q.iter_mut() {
            *x += rng.random_range(-0.1..0.1);
        }
        let pj = pose_with_jacobian(&body.bones, &bone_frames(&base, &q)).unwrap();
        let jac = pj.jacobian.to_dense();
        let h = 1e-6;
        for c in 0..q.len() {
            let mut qp = q.clone();
            qp[c] += h;
            let mut qm = q.clone();
            qm[c] -= h;
            let pp = pose_with_jacobian(&body.bones, &bone_frames(&base, &qp)).unwrap().pose;
            let pm = pose_with_jacobian(&body.bones, &bone_frames(&base, &qm)).unwrap().pose;
            for r in 0..pp.len() {
                let fd = (pp[r] - pm[r]) / (2.0 * h);
                assert!((fd - jac[(r, c)]).abs() < 1e-6 * (1.0 + fd.abs()), "({r},{c}) fd {fd} vs {}", jac[(r, c)]);
            }
        }
        // Pose read from frames agrees with extract_pose.
        let frames = bone_frames(&base, &q);
        let world: Vec<_> = frames.iter().map(|f| f.transform()).collect();
        let ext = extract_pose(&body.bones, &world).unwrap().to_vector();
        for (a, b) in ext.iter().zip(&pj.pose) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
