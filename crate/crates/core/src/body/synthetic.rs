//! Procedural humanoid bodies standing in for a scanned parametric model.
//!
//! The body is the union of one capsule per bone. It is voxelized on a
//! regular grid and every voxel is split into six tets sharing the main
//! diagonal, which yields a conforming mesh across voxels and limbs.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{integrate_bone_inertia, tet_bone_partition, Bone, BodyTemplate, MaterialFields, MaterialMap, SkinWeights};
use crate::error::{Error, Result};
use crate::kinematics::RigidTransform;
use crate::math::{point_segment_distance, segment_parameter, tet_signed_volume, Mat3, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoneSpec {
    pub name: String,
    pub parent: Option<usize>,
    pub head: [f64; 3],
    pub tail: [f64; 3],
    pub radius: f64,
    /// Multiplier on the body's base Young modulus for flesh around this bone.
    #[serde(default = "one")]
    pub stiffness_scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyConfig {
    pub bones: Vec<BoneSpec>,
    /// Voxel edge length at resolution 1 (m).
    pub voxel_size: f64,
    /// Voxel edge is `voxel_size / resolution`.
    pub resolution: u32,
    pub shape_coeffs: usize,
    /// Falloff length of skinning weights across joints (m).
    pub blend_width: f64,
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub fung_a: f64,
    pub fung_b: f64,
}

impl BodyConfig {
    fn with_bones(bones: Vec<BoneSpec>, voxel_size: f64) -> Self {
        Self {
            bones,
            voxel_size,
            resolution: 1,
            shape_coeffs: 10,
            blend_width: 0.02,
            young_modulus: 2.0e4,
            poisson_ratio: 0.4,
            density: 1050.0,
            fung_a: 0.5,
            fung_b: 2e-3,
        }
    }

    /// Two-bone limb along +x (upper arm and forearm).
    pub fn arm() -> Self {
        Self::with_bones(
            vec![
                spec("upper_arm", None, [0.0, 0.0, 0.0], [0.3, 0.0, 0.0], 0.05, 1.0),
                spec("forearm", Some(0), [0.3, 0.0, 0.0], [0.55, 0.0, 0.0], 0.045, 1.2),
            ],
            0.03,
        )
    }

    /// 24-bone T-pose humanoid with the joint tree of the common 24-joint
    /// body skeleton. Y is up, +x is the body's left.
    pub fn humanoid() -> Self {
        let mut bones = Vec::with_capacity(24);
        let mut add = |name: &str, parent: Option<usize>, head: [f64; 3], tail: [f64; 3], r: f64, k: f64| {
            bones.push(spec(name, parent, head, tail, r, k));
        };
        add("pelvis", None, [0.0, 0.95, 0.0], [0.0, 1.05, 0.0], 0.12, 0.8);
        add("left_hip", Some(0), [0.10, 0.88, 0.0], [0.11, 0.50, 0.0], 0.065, 0.8);
        add("right_hip", Some(0), [-0.10, 0.88, 0.0], [-0.11, 0.50, 0.0], 0.065, 0.8);
        add("spine1", Some(0), [0.0, 1.05, 0.0], [0.0, 1.18, 0.0], 0.12, 0.7);
        add("left_knee", Some(1), [0.11, 0.50, 0.0], [0.11, 0.10, 0.0], 0.055, 1.2);
        add("right_knee", Some(2), [-0.11, 0.50, 0.0], [-0.11, 0.10, 0.0], 0.055, 1.2);
        add("spine2", Some(3), [0.0, 1.18, 0.0], [0.0, 1.30, 0.0], 0.12, 0.7);
        add("left_ankle", Some(4), [0.11, 0.10, 0.0], [0.11, 0.05, 0.10], 0.045, 2.0);
        add("right_ankle", Some(5), [-0.11, 0.10, 0.0], [-0.11, 0.05, 0.10], 0.045, 2.0);
        add("spine3", Some(6), [0.0, 1.30, 0.0], [0.0, 1.48, 0.0], 0.12, 0.9);
        add("left_foot", Some(7), [0.11, 0.05, 0.10], [0.11, 0.05, 0.19], 0.045, 2.0);
        add("right_foot", Some(8), [-0.11, 0.05, 0.10], [-0.11, 0.05, 0.19], 0.045, 2.0);
        add("neck", Some(9), [0.0, 1.48, 0.0], [0.0, 1.58, 0.0], 0.055, 1.5);
        add("left_collar", Some(9), [0.05, 1.42, 0.0], [0.17, 1.42, 0.0], 0.06, 1.0);
        add("right_collar", Some(9), [-0.05, 1.42, 0.0], [-0.17, 1.42, 0.0], 0.06, 1.0);
        add("head", Some(12), [0.0, 1.58, 0.0], [0.0, 1.78, 0.0], 0.1, 3.0);
        add("left_shoulder", Some(13), [0.17, 1.42, 0.0], [0.44, 1.42, 0.0], 0.055, 1.0);
        add("right_shoulder", Some(14), [-0.17, 1.42, 0.0], [-0.44, 1.42, 0.0], 0.055, 1.0);
        add("left_elbow", Some(16), [0.44, 1.42, 0.0], [0.68, 1.42, 0.0], 0.05, 1.2);
        add("right_elbow", Some(17), [-0.44, 1.42, 0.0], [-0.68, 1.42, 0.0], 0.05, 1.2);
        add("left_wrist", Some(18), [0.68, 1.42, 0.0], [0.75, 1.42, 0.0], 0.045, 1.5);
        add("right_wrist", Some(19), [-0.68, 1.42, 0.0], [-0.75, 1.42, 0.0], 0.045, 1.5);
        add("left_hand", Some(20), [0.75, 1.42, 0.0], [0.86, 1.42, 0.0], 0.045, 1.5);
        add("right_hand", Some(21), [-0.75, 1.42, 0.0], [-0.86, 1.42, 0.0], 0.045, 1.5);
        Self::with_bones(bones, 0.035)
    }

    pub fn voxel_edge(&self) -> f64 {
        self.voxel_size / self.resolution as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 1 {
            return Err(Error::InvalidConfig("resolution must be at least 1".into()));
        }
        if self.bones.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "at least 2 bones required, got {}",
                self.bones.len()
            )));
        }
        if !(self.voxel_size > 0.0) || !(self.blend_width > 0.0) {
            return Err(Error::InvalidConfig("voxel size and blend width must be positive".into()));
        }
        if !(self.young_modulus > 0.0 && self.density > 0.0) {
            return Err(Error::InvalidConfig("young modulus and density must be positive".into()));
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(Error::InvalidConfig("poisson ratio must lie in (-1, 0.5)".into()));
        }
        if !(self.fung_a >= 0.0 && self.fung_b >= 0.0) {
            return Err(Error::InvalidConfig("Fung parameters must be non-negative".into()));
        }
        for (i, b) in self.bones.iter().enumerate() {
            let len = (Vec3::from(b.tail) - Vec3::from(b.head)).norm();
            if !(len > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "bone {i} ({}) has nonpositive length {len}",
                    b.name
                )));
            }
            if !(b.radius > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "bone {i} ({}) has nonpositive radius {}",
                    b.name, b.radius
                )));
            }
            if !(b.stiffness_scale > 0.0) {
                return Err(Error::InvalidConfig(format!("bone {i} has nonpositive stiffness scale")));
            }
            match (i, b.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::InvalidConfig("bone 0 must be the root".into())),
                (_, Some(p)) if p < i => {}
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "bone {i} must have a parent with a smaller index"
                    )))
                }
            }
        }
        Ok(())
    }
}

fn spec(name: &str, parent: Option<usize>, head: [f64; 3], tail: [f64; 3], radius: f64, k: f64) -> BoneSpec {
    BoneSpec {
        name: name.into(),
        parent,
        head,
        tail,
        radius,
        stiffness_scale: k,
    }
}

/// Six positively oriented tets of a cube whose corners are indexed by bit
/// pattern `x | y << 1 | z << 2`. All cubes share the 0-7 diagonal.
pub(crate) fn kuhn_cube_tets(corner_ids: [usize; 8], positions: &[Vec3]) -> Vec<[usize; 4]> {
    const PATHS: [[usize; 4]; 6] = [
        [0, 1, 3, 7],
        [0, 1, 5, 7],
        [0, 2, 3, 7],
        [0, 2, 6, 7],
        [0, 4, 5, 7],
        [0, 4, 6, 7],
    ];
    PATHS
        .iter()
        .map(|p| {
            let mut t = [corner_ids[p[0]], corner_ids[p[1]], corner_ids[p[2]], corner_ids[p[3]]];
            let vol = tet_signed_volume([&positions[t[0]], &positions[t[1]], &positions[t[2]], &positions[t[3]]]);
            if vol < 0.0 {
                t.swap(1, 2);
            }
            t
        })
        .collect()
}

struct Capsule {
    a: Vec3,
    b: Vec3,
    radius: f64,
}

pub fn generate_synthetic_body(config: &BodyConfig, seed: u64) -> Result<BodyTemplate> {
    config.validate()?;
    let h = config.voxel_edge();
    let caps: Vec<Capsule> = config
        .bones
        .iter()
        .map(|b| Capsule {
            a: Vec3::from(b.head),
            b: Vec3::from(b.tail),
            radius: b.radius,
        })
        .collect();
    let inside = |p: &Vec3| caps.iter().any(|c| point_segment_distance(p, &c.a, &c.b) <= c.radius);

    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for c in &caps {
        for e in [c.a, c.b] {
            lo = lo.inf(&(e - Vec3::repeat(c.radius)));
            hi = hi.sup(&(e + Vec3::repeat(c.radius)));
        }
    }
    let origin = lo - Vec3::repeat(h);
    let dims: [usize; 3] = std::array::from_fn(|k| ((hi[k] - origin[k]) / h).ceil() as usize + 2);
    let cell_center = |i: usize, j: usize, k: usize| {
        origin + Vec3::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h, (k as f64 + 0.5) * h)
    };

    let mut cells: Vec<[usize; 3]> = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if inside(&cell_center(i, j, k)) {
                    cells.push([i, j, k]);
                }
            }
        }
    }
    let cells = largest_face_connected(&cells);
    if cells.is_empty() {
        return Err(Error::InvalidConfig("body is smaller than one voxel".into()));
    }

    // Grid points used by kept cells, numbered in scan order.
    let mut point_ids: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    for c in &cells {
        for corner in 0..8 {
            let key = (
                c[0] + (corner & 1),
                c[1] + ((corner >> 1) & 1),
                c[2] + ((corner >> 2) & 1),
            );
            point_ids.entry((key.2, key.1, key.0)).or_insert(0);
        }
    }
    let mut tet_vertices = Vec::with_capacity(point_ids.len());
    for (n, (key, id)) in point_ids.iter_mut().enumerate() {
        *id = n;
        tet_vertices.push(origin + Vec3::new(key.2 as f64 * h, key.1 as f64 * h, key.0 as f64 * h));
    }
    let mut tets = Vec::with_capacity(cells.len() * 6);
    for c in &cells {
        let ids: [usize; 8] = std::array::from_fn(|corner| {
            point_ids[&(
                c[2] + ((corner >> 2) & 1),
                c[1] + ((corner >> 1) & 1),
                c[0] + (corner & 1),
            )]
        });
        tets.extend(kuhn_cube_tets(ids, &tet_vertices));
    }

    let (surface_to_tet, surface_triangles) = boundary_surface(&tets, &tet_vertices);
    let surface_vertices: Vec<Vec3> = surface_to_tet.iter().map(|&v| tet_vertices[v]).collect();

    let skinning_weights = blend_weights(&tet_vertices, &caps, config.blend_width);

    let mut bones: Vec<Bone> = config
        .bones
        .iter()
        .map(|s| {
            let head = Vec3::from(s.head);
            let tail = Vec3::from(s.tail);
            let dir = (tail - head).normalize();
            let rot = UnitQuaternion::rotation_between(&Vec3::y(), &dir)
                .unwrap_or_else(|| UnitQuaternion::from_scaled_axis(Vec3::x() * std::f64::consts::PI));
            Bone {
                name: s.name.clone(),
                parent: s.parent,
                head,
                tail,
                rest_transform: RigidTransform::new(rot, head),
                mass: 0.0,
                center_of_mass: Vec3::zeros(),
                inertia_tensor: Mat3::zeros(),
            }
        })
        .collect();

    let nv = tet_vertices.len();
    let blend_field = |values: &dyn Fn(usize) -> f64| -> Vec<f64> {
        skinning_weights
            .iter()
            .map(|w| w.iter().map(|&(b, x)| x * values(b)).sum())
            .collect()
    };
    let material_baseline = MaterialFields {
        young: blend_field(&|b| config.young_modulus * config.bones[b].stiffness_scale),
        poisson: vec![config.poisson_ratio; nv],
        density: vec![config.density; nv],
        fung_a: vec![config.fung_a; nv],
        fung_b: vec![config.fung_b; nv],
    };

    let radial = |v: usize, b: usize| -> Vec3 {
        let p = tet_vertices[v];
        let c = &caps[b];
        let s = segment_parameter(&p, &c.a, &c.b);
        p - (c.a + (c.b - c.a) * s)
    };
    let thickness_baseline: Vec<f64> = surface_to_tet
        .iter()
        .map(|&v| {
            let t: f64 = skinning_weights[v].iter().map(|&(b, w)| w * radial(v, b).norm()).sum();
            t.max(1e-3)
        })
        .collect();

    let shape_basis = build_shape_basis(config, seed, &skinning_weights, nv, &radial, &caps);

    let partition = tet_bone_partition(&tets, &skinning_weights, bones.len());
    let inertia = integrate_bone_inertia(&bones, &tets, &partition, &tet_vertices, &material_baseline.density);
    for (b, bi) in bones.iter_mut().zip(inertia) {
        if bi.mass <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "bone {} received no volume at voxel size {h}; increase its radius or the resolution",
                b.name
            )));
        }
        b.mass = bi.mass;
        b.center_of_mass = bi.center_of_mass;
        b.inertia_tensor = bi.inertia;
    }

    let template = BodyTemplate {
        surface_vertices,
        surface_to_tet,
        surface_triangles,
        tet_vertices,
        tets,
        bones,
        skinning_weights,
        shape_basis,
        pose_correctives: None,
        material_baseline,
        thickness_baseline,
        material_map: MaterialMap::with_coeffs(config.shape_coeffs),
    };
    template.validate()?;
    Ok(template)
}

fn largest_face_connected(cells: &[[usize; 3]]) -> Vec<[usize; 3]> {
    let index: HashMap<[usize; 3], usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut component = vec![usize::MAX; cells.len()];
    let mut sizes = Vec::new();
    for start in 0..cells.len() {
        if component[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![start];
        component[start] = id;
        let mut size = 0;
        while let Some(c) = stack.pop() {
            size += 1;
            let cell = cells[c];
            for axis in 0..3 {
                for delta in [-1i64, 1] {
                    let mut n = cell;
                    let x = n[axis] as i64 + delta;
                    if x < 0 {
                        continue;
                    }
                    n[axis] = x as usize;
                    if let Some(&j) = index.get(&n) {
                        if component[j] == usize::MAX {
                            component[j] = id;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    let best = (0..sizes.len()).max_by_key(|&i| (sizes[i], usize::MAX - i)).unwrap_or(0);
    cells
        .iter()
        .zip(&component)
        .filter(|(_, &c)| c == best)
        .map(|(c, _)| *c)
        .collect()
}

/// Faces used by exactly one tet, oriented away from the tet's opposite
/// vertex. Returns the surface-to-tet vertex map and surface triangles.
fn boundary_surface(tets: &[[usize; 4]], verts: &[Vec3]) -> (Vec<usize>, Vec<[usize; 3]>) {
    let mut faces: HashMap<[usize; 3], (usize, [usize; 3], usize)> = HashMap::new();
    for t in tets {
        for skip in 0..4 {
            let tri: Vec<usize> = (0..4).filter(|&k| k != skip).map(|k| t[k]).collect();
            let mut key = [tri[0], tri[1], tri[2]];
            key.sort_unstable();
            faces
                .entry(key)
                .and_modify(|e| e.0 += 1)
                .or_insert((1, [tri[0], tri[1], tri[2]], t[skip]));
        }
    }
    let mut boundary: Vec<([usize; 3], [usize; 3])> = faces
        .into_iter()
        .filter(|(_, v)| v.0 == 1)
        .map(|(key, (_, tri, opposite))| {
            let n = (verts[tri[1]] - verts[tri[0]]).cross(&(verts[tri[2]] - verts[tri[0]]));
            let oriented = if n.dot(&(verts[opposite] - verts[tri[0]])) > 0.0 {
                [tri[0], tri[2], tri[1]]
            } else {
                tri
            };
            (key, oriented)
        })
        .collect();
    boundary.sort_unstable_by_key(|(k, _)| *k);

    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, tri) in &boundary {
        for &v in tri {
            map.insert(v, 0);
        }
    }
    let mut surface_to_tet = Vec::with_capacity(map.len());
    for (n, (v, id)) in map.iter_mut().enumerate() {
        *id = n;
        surface_to_tet.push(*v);
    }
    let triangles = boundary
        .iter()
        .map(|(_, tri)| [map[&tri[0]], map[&tri[1]], map[&tri[2]]])
        .collect();
    (surface_to_tet, triangles)
}

const MAX_INFLUENCES: usize = 4;

fn blend_weights(verts: &[Vec3], caps: &[Capsule], width: f64) -> SkinWeights {
    verts
        .iter()
        .map(|p| {
            let d: Vec<f64> = caps.iter().map(|c| point_segment_distance(p, &c.a, &c.b)).collect();
            let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut w: Vec<(usize, f64)> = d
                .iter()
                .enumerate()
                .map(|(b, &x)| (b, (-(x - dmin) / width).exp()))
                .filter(|(_, x)| *x > 1e-3)
                .collect();
            w.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            w.truncate(MAX_INFLUENCES);
            w.sort_by_key(|x| x.0);
            let sum: f64 = w.iter().map(|x| x.1).sum();
            for x in &mut w {
                x.1 /= sum;
            }
            w
        })
        .collect()
}

/// Column 0 inflates flesh radially around the bones (corpulence); the
/// remaining columns are seeded random per-bone radial and anisotropic
/// squash fields. All fields vanish on bone axes.
fn build_shape_basis(
    config: &BodyConfig,
    seed: u64,
    weights: &SkinWeights,
    nv: usize,
    radial: &dyn Fn(usize, usize) -> Vec3,
    caps: &[Capsule],
) -> DMatrix<f64> {
    let nc = config.shape_coeffs;
    let nb = caps.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    struct Field {
        scale: Vec<f64>,
        squash: Vec<f64>,
        dir: Vec<Vec3>,
    }
    let mut fields = Vec::with_capacity(nc);
    for k in 0..nc {
        if k == 0 {
            fields.push(Field {
                scale: vec![0.1; nb],
                squash: vec![0.0; nb],
                dir: vec![Vec3::x(); nb],
            });
            continue;
        }
        let mut f = Field {
            scale: Vec::with_capacity(nb),
            squash: Vec::with_capacity(nb),
            dir: Vec::with_capacity(nb),
        };
        for c in caps {
            f.scale.push(rng.random_range(-0.05..0.05));
            f.squash.push(rng.random_range(-0.05..0.05));
            let axis = (c.b - c.a).normalize();
            let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            let e1 = axis.cross(&helper).normalize();
            let e2 = axis.cross(&e1);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            f.dir.push(e1 * angle.cos() + e2 * angle.sin());
        }
        fields.push(f);
    }
    let mut basis = DMatrix::zeros(3 * nv, nc);
    for v in 0..nv {
        for &(b, w) in &weights[v] {
            let r = radial(v, b);
            for (k, f) in fields.iter().enumerate() {
                let off = (r * f.scale[b] + f.dir[b] * (f.squash[b] * r.dot(&f.dir[b]))) * w;
                for a in 0..3 {
                    basis[(3 * v + a, k)] += off[a];
                }
            }
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arm_has_two_bones_and_partition_of_unity() {
        let t = generate_synthetic_body(&BodyConfig::arm(), 0).unwrap();
        assert_eq!(t.n_bones(), 2);
        for w in &t.skinning_weights {
            let s: f64 = w.iter().map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|x| x.1 >= 0.0));
        }
    }

    #[test]
    fn humanoid_is_desk_scale() {
        let t = generate_synthetic_body(&BodyConfig::humanoid(), 0).unwrap();
        assert_eq!(t.n_bones(), 24);
        let nv = t.n_tet_vertices();
        assert!((500..=5000).contains(&nv), "{nv} tet vertices");
        let total: f64 = t.bones.iter().map(|b| b.mass).sum();
        assert!(total > 30.0 && total < 120.0, "total mass {total}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_body(&BodyConfig::arm(), 7).unwrap();
        let b = generate_synthetic_body(&BodyConfig::arm(), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_body(&BodyConfig::arm(), 8).unwrap();
        assert_ne!(a.shape_basis, c.shape_basis);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = BodyConfig::arm();
        c.bones[1].radius = 0.0;
        assert!(matches!(generate_synthetic_body(&c, 0), Err(Error::InvalidConfig(m)) if m.contains("radius")));
        let mut c = BodyConfig::arm();
        c.bones[1].tail = c.bones[1].head;
        assert!(matches!(generate_synthetic_body(&c, 0), Err(Error::InvalidConfig(m)) if m.contains("length")));
        let mut c = BodyConfig::arm();
        c.resolution = 0;
        assert!(generate_synthetic_body(&c, 0).is_err());
        let mut c = BodyConfig::arm();
        c.bones.truncate(1);
        assert!(generate_synthetic_body(&c, 0).is_err());
    }

    #[test]
    fn surface_is_closed_and_outward() {
        let t = generate_synthetic_body(&BodyConfig::arm(), 0).unwrap();
        // Closed: every edge shared by exactly two triangles with opposite direction.
        let mut edges: HashMap<(usize, usize), i32> = HashMap::new();
        for tri in &t.surface_triangles {
            for k in 0..3 {
                *edges.entry((tri[k], tri[(k + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &edges {
            assert_eq!(n, 1);
            assert_eq!(edges.get(&(b, a)), Some(&1));
        }
        // Outward: divergence theorem gives positive enclosed volume.
        let vol: f64 = t
            .surface_triangles
            .iter()
            .map(|tri| {
                let p = [t.surface_vertices[tri[0]], t.surface_vertices[tri[1]], t.surface_vertices[tri[2]]];
                p[0].dot(&p[1].cross(&p[2])) / 6.0
            })
            .sum();
        let tet_vol: f64 = t
            .tets
            .iter()
            .map(|q| tet_signed_volume([&t.tet_vertices[q[0]], &t.tet_vertices[q[1]], &t.tet_vertices[q[2]], &t.tet_vertices[q[3]]]))
            .sum();
        assert!((vol - tet_vol).abs() < 1e-9 * tet_vol);
    }
}
