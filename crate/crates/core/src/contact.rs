//! Analytic colliders, per-bone capsule proxies and one-sided quadratic
//! penalties. Penalties are expressed on world points; callers pull them
//! back to their DoFs through `dx/dq`.

use serde::{Deserialize, Serialize};

use crate::body::{Bone, SkinWeights};
use crate::error::{Error, Result};
use crate::kinematics::{BoneFrame, BONE_DOFS};
use crate::math::{segment_parameter, segment_segment_parameters, Mat3, Vec3};
use crate::sim::Accumulator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Capsule { a: [f64; 3], b: [f64; 3], radius: f64 },
    HalfSpace { point: [f64; 3], normal: [f64; 3] },
}

fn v3(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

/// Unit direction of `v`, or the first coordinate axis not parallel to
/// `axis` when `v` vanishes.
fn direction_or_axis(v: &Vec3, axis: Option<&Vec3>) -> Vec3 {
    let n = v.norm();
    if n > 1e-14 {
        return v / n;
    }
    for i in 0..3 {
        let e = Vec3::ith(i, 1.0);
        let p = match axis {
            Some(a) if a.norm() > 0.0 => e - a * (a.dot(&e) / a.norm_squared()),
            _ => e,
        };
        if p.norm() > 1e-8 {
            return p.normalize();
        }
    }
    Vec3::x()
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Sphere { radius, .. } | Shape::Capsule { radius, .. } if !(*radius > 0.0) => {
                Err(Error::InvalidConfig(format!("collider radius {radius} must be positive")))
            }
            Shape::HalfSpace { normal, .. } if ((v3(normal)).norm() - 1.0).abs() > 1e-9 => {
                Err(Error::InvalidConfig("half-space normal must have unit length".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn translated(&self, t: &Vec3) -> Shape {
        let add = |p: &[f64; 3]| [p[0] + t.x, p[1] + t.y, p[2] + t.z];
        match self {
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: add(center),
                radius: *radius,
            },
            Shape::Capsule { a, b, radius } => Shape::Capsule {
                a: add(a),
                b: add(b),
                radius: *radius,
            },
            Shape::HalfSpace { point, normal } => Shape::HalfSpace {
                point: add(point),
                normal: *normal,
            },
        }
    }

    /// Signed distance (negative inside) and unit outward gradient.
    pub fn signed_distance(&self, p: &Vec3) -> (f64, Vec3) {
        match self {
            Shape::Sphere { center, radius } => {
                let d = p - v3(center);
                (d.norm() - radius, direction_or_axis(&d, None))
            }
            Shape::Capsule { a, b, radius } => {
                let (a, b) = (v3(a), v3(b));
                let s = segment_parameter(p, &a, &b);
                let d = p - (a + (b - a) * s);
                (d.norm() - radius, direction_or_axis(&d, Some(&(b - a))))
            }
            Shape::HalfSpace { point, normal } => {
                let n = v3(normal);
                ((p - v3(point)).dot(&n), n)
            }
        }
    }

    /// Axis-aligned bounds; half-spaces are unbounded.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        match self {
            Shape::Sphere { center, radius } => {
                let r = Vec3::repeat(*radius);
                Some((v3(center) - r, v3(center) + r))
            }
            Shape::Capsule { a, b, radius } => {
                let r = Vec3::repeat(*radius);
                Some((v3(a).inf(&v3(b)) - r, v3(a).sup(&v3(b)) + r))
            }
            Shape::HalfSpace { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub time: f64,
    /// Translation applied to the collider's declared geometry.
    pub offset: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collider {
    #[serde(flatten)]
    pub shape: Shape,
    /// Penalty stiffness per unit area weight; `None` uses the settings.
    #[serde(default)]
    pub stiffness: Option<f64>,
    /// Piecewise-linear translation over time, held at the ends.
    #[serde(default)]
    pub trajectory: Vec<Keyframe>,
}

impl Collider {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            stiffness: None,
            trajectory: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if let Some(k) = self.stiffness {
            if !(k >= 0.0) {
                return Err(Error::InvalidConfig(format!("collider stiffness {k} must be non-negative")));
            }
        }
        if self.trajectory.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(Error::InvalidConfig("collider keyframe times must increase".into()));
        }
        Ok(())
    }

    pub fn offset_at(&self, time: f64) -> Vec3 {
        let k = &self.trajectory;
        match k.len() {
            0 => Vec3::zeros(),
            _ if time <= k[0].time => v3(&k[0].offset),
            n if time >= k[n - 1].time => v3(&k[n - 1].offset),
            _ => {
                let i = k.windows(2).position(|w| time < w[1].time).expect("bracketed");
                let s = (time - k[i].time) / (k[i + 1].time - k[i].time);
                v3(&k[i].offset) * (1.0 - s) + v3(&k[i + 1].offset) * s
            }
        }
    }

    pub fn shape_at(&self, time: f64) -> Shape {
        self.shape.translated(&self.offset_at(time))
    }
}

/// Penalty on one world point: value, `dV/dx` and Gauss-Newton `d2V/dx2`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointPenalty {
    pub point: usize,
    pub value: f64,
    pub gradient: Vec3,
    pub hessian: Mat3,
    pub depth: f64,
    /// Outward collider normal at the point.
    pub normal: Vec3,
    /// `k A`: the Hessian is `stiffness * normal normal^T`.
    pub stiffness: f64,
}

/// `V = 1/2 k A d^2` for every point inside a collider (`d < 0`).
pub fn point_penalties(points: &[Vec3], areas: &[f64], shapes: &[(Shape, f64)]) -> Vec<PointPenalty> {
    let mut out = Vec::new();
    for (shape, k) in shapes {
        let bounds = shape.bounds();
        for (i, (p, &a)) in points.iter().zip(areas).enumerate() {
            if let Some((lo, hi)) = &bounds {
                if (0..3).any(|j| p[j] < lo[j] || p[j] > hi[j]) {
                    continue;
                }
            }
            let (d, n) = shape.signed_distance(p);
            if d >= 0.0 {
                continue;
            }
            let ka = k * a;
            out.push(PointPenalty {
                point: i,
                value: 0.5 * ka * d * d,
                gradient: n * (ka * d),
                hessian: n * n.transpose() * ka,
                depth: -d,
                normal: n,
                stiffness: ka,
            });
        }
    }
    out
}

/// Deepest penetration of any point into any shape (0 if none).
pub fn max_point_penetration(points: &[Vec3], shapes: &[Shape]) -> f64 {
    let mut worst: f64 = 0.0;
    for s in shapes {
        for p in points {
            worst = worst.max(-s.signed_distance(p).0);
        }
    }
    worst
}

/// Capsule bound rigidly to a bone frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapsuleProxy {
    pub bone: usize,
    /// Segment ends in the bone frame.
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

impl CapsuleProxy {
    pub fn local(&self) -> (Vec3, Vec3) {
        (v3(&self.a), v3(&self.b))
    }

    pub fn world(&self, frame: &BoneFrame) -> (Vec3, Vec3) {
        let (a, b) = self.local();
        (
            frame.rotation * a + frame.translation,
            frame.rotation * b + frame.translation,
        )
    }
}

/// One capsule per bone along head to tail. The radius is the 90th
/// percentile distance of the bone's dominant vertices to the segment.
pub fn build_capsule_proxies(bones: &[Bone], rest: &[Vec3], weights: &SkinWeights) -> Result<Vec<CapsuleProxy>> {
    let mut dists: Vec<Vec<f64>> = vec![Vec::new(); bones.len()];
    for (p, w) in rest.iter().zip(weights) {
        let (b, _) = w.iter().copied().fold((usize::MAX, f64::NEG_INFINITY), |a, x| if x.1 > a.1 { x } else { a });
        if b == usize::MAX {
            continue;
        }
        let d = crate::math::point_segment_distance(p, &bones[b].head, &bones[b].tail);
        dists[b].push(d);
    }
    bones
        .iter()
        .enumerate()
        .map(|(i, bone)| {
            let d = &mut dists[i];
            if d.is_empty() {
                return Err(Error::InvalidConfig(format!("bone {} has no dominant vertices", bone.name)));
            }
            d.sort_by(f64::total_cmp);
            let k = ((0.9 * d.len() as f64).ceil() as usize).clamp(1, d.len()) - 1;
            let r = bone.rest_transform.rotation_matrix().transpose();
            let a = r * (bone.head - bone.rest_transform.translation);
            let b = r * (bone.tail - bone.rest_transform.translation);
            Ok(CapsuleProxy {
                bone: i,
                a: [a.x, a.y, a.z],
                b: [b.x, b.y, b.z],
                radius: d[k].max(1e-4),
            })
        })
        .collect()
}

fn capsule_bounds(a: &Vec3, b: &Vec3, r: f64) -> (Vec3, Vec3) {
    (a.inf(b) - Vec3::repeat(r), a.sup(b) + Vec3::repeat(r))
}

fn overlap(x: &(Vec3, Vec3), y: &(Vec3, Vec3)) -> bool {
    (0..3).all(|i| x.0[i] <= y.1[i] && y.0[i] <= x.1[i])
}

/// A penetrating capsule pair: closest points and separation gap (< 0).
#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleContact {
    pub first: usize,
    pub second: usize,
    /// Closest points in each bone's frame.
    pub local_first: Vec3,
    pub local_second: Vec3,
    /// Unit direction from the second closest point to the first.
    pub normal: Vec3,
    pub gap: f64,
}

/// Overlapping pairs between two capsule sets at the given frames.
pub fn capsule_contacts(
    first: &[CapsuleProxy],
    first_frames: &[BoneFrame],
    second: &[CapsuleProxy],
    second_frames: &[BoneFrame],
) -> Vec<CapsuleContact> {
    let world_a: Vec<(Vec3, Vec3)> = first.iter().map(|c| c.world(&first_frames[c.bone])).collect();
    let world_b: Vec<(Vec3, Vec3)> = second.iter().map(|c| c.world(&second_frames[c.bone])).collect();
    let mut out = Vec::new();
    for (i, ca) in first.iter().enumerate() {
        let (a0, a1) = world_a[i];
        let ba = capsule_bounds(&a0, &a1, ca.radius);
        for (j, cb) in second.iter().enumerate() {
            let (b0, b1) = world_b[j];
            if !overlap(&ba, &capsule_bounds(&b0, &b1, cb.radius)) {
                continue;
            }
            let (s, t) = segment_segment_parameters(&a0, &a1, &b0, &b1);
            let p = a0 + (a1 - a0) * s;
            let q = b0 + (b1 - b0) * t;
            let gap = (p - q).norm() - ca.radius - cb.radius;
            if gap >= 0.0 {
                continue;
            }
            let (la0, la1) = ca.local();
            let (lb0, lb1) = cb.local();
            out.push(CapsuleContact {
                first: i,
                second: j,
                local_first: la0 + (la1 - la0) * s,
                local_second: lb0 + (lb1 - lb0) * t,
                normal: direction_or_axis(&(p - q), Some(&(a1 - a0))),
                gap,
            });
        }
    }
    out
}

/// `V = 1/2 k gap^2` for every overlapping capsule pair, with bone DoFs
/// of the two sets starting at `first_offset` and `second_offset` of the
/// accumulator. Closest points are held fixed (their motion does not
/// change the value to first order), and the Hessian keeps only the
/// normal direction.
#[allow(clippy::too_many_arguments)]
pub fn capsule_penalty(
    first: &[CapsuleProxy],
    first_frames: &[BoneFrame],
    first_offset: usize,
    second: &[CapsuleProxy],
    second_frames: &[BoneFrame],
    second_offset: usize,
    stiffness: f64,
    out: &mut Accumulator,
) -> f64 {
    let mut max_depth: f64 = 0.0;
    let mut cols = Vec::with_capacity(2 * BONE_DOFS);
    for c in capsule_contacts(first, first_frames, second, second_frames) {
        max_depth = max_depth.max(-c.gap);
        out.value += 0.5 * stiffness * c.gap * c.gap;
        if !out.wants_gradient() {
            continue;
        }
        let ba = first[c.first].bone;
        let bb = second[c.second].bone;
        let ja = first_frames[ba].point_jacobian(&c.local_first).transpose() * c.normal;
        let jb = second_frames[bb].point_jacobian(&c.local_second).transpose() * c.normal;
        cols.clear();
        cols.extend((0..BONE_DOFS).map(|k| (first_offset + BONE_DOFS * ba + k, ja[k])));
        cols.extend((0..BONE_DOFS).map(|k| (second_offset + BONE_DOFS * bb + k, -jb[k])));
        out.add_gauss_newton(&cols, stiffness * c.gap, stiffness);
    }
    max_depth
}

/// Deepest capsule-capsule penetration between two sets (0 if none).
pub fn max_capsule_penetration(
    first: &[CapsuleProxy],
    first_frames: &[BoneFrame],
    second: &[CapsuleProxy],
    second_frames: &[BoneFrame],
) -> f64 {
    capsule_contacts(first, first_frames, second, second_frames)
        .iter()
        .map(|c| -c.gap)
        .fold(0.0, f64::max)
}

/// Barycentric area weight per surface vertex (a third of each incident
/// triangle's area).
pub fn vertex_areas(points: &[Vec3], triangles: &[[usize; 3]]) -> Vec<f64> {
    let mut a = vec![0.0; points.len()];
    for t in triangles {
        let area = 0.5 * (points[t[1]] - points[t[0]]).cross(&(points[t[2]] - points[t[0]])).norm();
        for &v in t {
            a[v] += area / 3.0;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{generate_synthetic_body, BodyConfig};
    use crate::kinematics::{bone_dofs_from_transforms, bone_frames, RigidTransform};
    use crate::math::{rel_err, Quat};
    use crate::sim::Level;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn analytic_distances() {
        let s = Shape::Sphere {
            center: [0.0; 3],
            radius: 1.0,
        };
        assert_eq!(s.signed_distance(&Vec3::new(2.0, 0.0, 0.0)), (1.0, Vec3::x()));
        assert_eq!(s.signed_distance(&Vec3::zeros()), (-1.0, Vec3::x()));
        let c = Shape::Capsule {
            a: [0.0; 3],
            b: [1.0, 0.0, 0.0],
            radius: 0.5,
        };
        let (d, n) = c.signed_distance(&Vec3::new(0.5, 0.5, 0.0));
        assert!(d.abs() < 1e-15 && (n - Vec3::y()).norm() < 1e-15);
        // Medial point: first axis not along the segment.
        assert_eq!(c.signed_distance(&Vec3::new(0.3, 0.0, 0.0)).1, Vec3::y());
        let h = Shape::HalfSpace {
            point: [0.0, 1.0, 0.0],
            normal: [0.0, 1.0, 0.0],
        };
        assert_eq!(h.signed_distance(&Vec3::new(4.0, 0.5, 2.0)), (-0.5, Vec3::y()));
        assert!(Shape::Sphere {
            center: [0.0; 3],
            radius: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn distances_match_sampled_surface() {
        // Oracle: nearest of a dense sample of the surface (sign from the
        // analytic inside test is not needed for outside points).
        let shapes = [
            Shape::Sphere {
                center: [0.1, -0.2, 0.3],
                radius: 0.4,
            },
            Shape::Capsule {
                a: [-0.3, 0.0, 0.1],
                b: [0.4, 0.2, -0.1],
                radius: 0.25,
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for shape in &shapes {
            let mut samples = Vec::new();
            let (center, axis, r, len) = match shape {
                Shape::Sphere { center, radius } => (v3(center), Vec3::x(), *radius, 0.0),
                Shape::Capsule { a, b, radius } => (v3(a), (v3(b) - v3(a)).normalize(), *radius, (v3(b) - v3(a)).norm()),
                _ => unreachable!(),
            };
            let u = axis.cross(&Vec3::new(0.3, 0.9, 0.1)).normalize();
            let w = axis.cross(&u);
            let n = 400;
            for i in 0..=n {
                for j in 0..n {
                    let theta = std::f64::consts::PI * i as f64 / n as f64;
                    let phi = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                    let dir = axis * theta.cos() + (u * phi.cos() + w * phi.sin()) * theta.sin();
                    let base = if dir.dot(&axis) > 0.0 { center + axis * len } else { center };
                    samples.push(base + dir * r);
                }
            }
            for k in 0..=n {
                for j in 0..n {
                    let phi = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                    samples.push(center + axis * (len * k as f64 / n as f64) + (u * phi.cos() + w * phi.sin()) * r);
                }
            }
            for _ in 0..20 {
                let p = center + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let (d, _) = shape.signed_distance(&p);
                if d <= 0.0 {
                    continue;
                }
                let oracle = samples.iter().map(|s| (p - s).norm()).fold(f64::INFINITY, f64::min);
                // Samples lie on the surface, so the oracle can only overshoot,
                // by at most the sampling spacing.
                assert!(d <= oracle + 1e-12, "{oracle} {d}");
                assert!(oracle - d < 2.0 * std::f64::consts::PI * r / n as f64, "{oracle} {d}");
            }
        }
    }

    #[test]
    fn penalty_value_and_trajectory() {
        let h = Shape::HalfSpace {
            point: [0.0; 3],
            normal: [0.0, 1.0, 0.0],
        };
        let pts = [Vec3::new(0.0, -0.01, 0.0), Vec3::new(0.0, 0.3, 0.0)];
        let pen = point_penalties(&pts, &[1.0, 1.0], &[(h.clone(), 1e4)]);
        assert_eq!(pen.len(), 1);
        assert!((pen[0].value - 0.5).abs() < 1e-12);
        assert!(point_penalties(&[pts[1]], &[1.0], &[(h, 1e4)]).is_empty());

        let mut c = Collider::new(Shape::Sphere {
            center: [0.0; 3],
            radius: 0.1,
        });
        c.trajectory = vec![
            Keyframe { time: 0.0, offset: [0.0; 3] },
            Keyframe { time: 1.0, offset: [1.0, 0.0, 0.0] },
        ];
        assert_eq!(c.offset_at(0.25), Vec3::new(0.25, 0.0, 0.0));
        assert_eq!(c.offset_at(3.0), Vec3::x());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn proxies_cover_their_vertices_and_follow_bones() {
        let t = generate_synthetic_body(&BodyConfig::humanoid(), 0).unwrap();
        let proxies = build_capsule_proxies(&t.bones, &t.tet_vertices, &t.skinning_weights).unwrap();
        assert_eq!(proxies.len(), t.bones.len());
        let dom = t.dominant_bones();
        for (b, p) in proxies.iter().enumerate() {
            let verts: Vec<&Vec3> = (0..t.tet_vertices.len()).filter(|&v| dom[v].0 == b).map(|v| &t.tet_vertices[v]).collect();
            let inside = verts
                .iter()
                .filter(|v| crate::math::point_segment_distance(v, &t.bones[b].head, &t.bones[b].tail) <= p.radius)
                .count();
            assert!(inside as f64 >= 0.9 * verts.len() as f64);
        }
        let world: Vec<RigidTransform> = t.bones.iter().map(|b| b.rest_transform).collect();
        let (base, mut q) = bone_dofs_from_transforms(&world);
        q[0] = 0.4;
        q[3] += 0.5;
        let frames = bone_frames(&base, &q);
        let (a, b) = proxies[0].world(&frames[0]);
        let tr = frames[0].transform();
        let rest = &t.bones[0].rest_transform;
        assert!((a - tr.apply(&rest.inverse().apply(&t.bones[0].head))).norm() < 1e-12);
        assert!((b - tr.apply(&rest.inverse().apply(&t.bones[0].tail))).norm() < 1e-12);
    }

    #[test]
    fn capsule_penalty_gradient_matches_finite_differences() {
        let caps = vec![CapsuleProxy {
            bone: 0,
            a: [0.0; 3],
            b: [0.3, 0.0, 0.0],
            radius: 0.05,
        }];
        let base = [Quat::identity()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 20 {
            let mut q1 = [0.0; 6];
            let mut q2 = vec![0.0; 6];
            for k in 0..3 {
                q1[k] = rng.random_range(-0.5..0.5);
                q2[k] = rng.random_range(-0.5..0.5);
                q2[3 + k] = rng.random_range(-0.08..0.08);
            }
            let eval = |q: &[f64]| {
                let f1 = bone_frames(&base, &q[..6]);
                let f2 = bone_frames(&base, &q[6..]);
                let mut acc = Accumulator::new(12, 12, Level::Gradient);
                capsule_penalty(&caps, &f1, 0, &caps, &f2, 6, 1e3, &mut acc);
                acc
            };
            let q: Vec<f64> = q1.iter().chain(&q2).copied().collect();
            let acc = eval(&q);
            if acc.value < 1e-8 {
                continue;
            }
            checked += 1;
            let scale = crate::math::max_abs(&acc.gradient);
            for i in 0..12 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += 1e-7;
                qm[i] -= 1e-7;
                let fd = (eval(&qp).value - eval(&qm).value) / 2e-7;
                assert!(rel_err(acc.gradient[i], fd, scale) < 1e-4);
            }
        }
    }

    #[test]
    fn areas_sum_to_surface_area() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let tris = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
        let a = vertex_areas(&pts, &tris);
        let total = 1.5 + 0.5 * 3f64.sqrt();
        assert!((a.iter().sum::<f64>() - total).abs() < 1e-14);
    }
}
