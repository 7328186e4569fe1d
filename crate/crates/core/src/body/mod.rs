//! Parametric body templates: rest geometry, skeleton, skinning weights,
//! shape blendshapes and baseline material fields.

pub mod io;
pub mod shape;
pub mod synthetic;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::RigidTransform;
use crate::math::{tet_signed_volume, Mat3, Vec3};

pub use shape::{apply_shape, material_from_shape, ShapedMaterial};
pub use synthetic::{generate_synthetic_body, BodyConfig, BoneSpec};

/// Per tet vertex: sparse `(bone, weight)` list.
pub type SkinWeights = Vec<Vec<(usize, f64)>>;

pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Bone {
    pub name: String,
    pub parent: Option<usize>,
    pub head: Vec3,
    pub tail: Vec3,
    /// Bone frame at rest; origin at the head.
    pub rest_transform: RigidTransform,
    pub mass: f64,
    /// Center of mass in the bone frame.
    pub center_of_mass: Vec3,
    /// Inertia about the center of mass, bone frame.
    pub inertia_tensor: Mat3,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShapeCoeffs {
    pub beta: Vec<f64>,
}

impl ShapeCoeffs {
    pub fn zeros(n: usize) -> Self {
        Self { beta: vec![0.0; n] }
    }

    pub fn new(beta: Vec<f64>) -> Self {
        Self { beta }
    }

    pub fn unit(n: usize, k: usize) -> Self {
        let mut beta = vec![0.0; n];
        beta[k] = 1.0;
        Self { beta }
    }
}

/// Per tet vertex material samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaterialFields {
    pub young: Vec<f64>,
    pub poisson: Vec<f64>,
    pub density: Vec<f64>,
    pub fung_a: Vec<f64>,
    pub fung_b: Vec<f64>,
}

impl MaterialFields {
    pub fn len(&self) -> usize {
        self.young.len()
    }

    pub fn is_empty(&self) -> bool {
        self.young.is_empty()
    }
}

/// Parameters of the analytic shape-to-material map:
/// `E = E0 * exp(modulus_gain * s)`, `t = t0 * (1 + thickness_gain * s)`,
/// where `s = corpulence_weights . beta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialMap {
    pub corpulence_weights: Vec<f64>,
    pub modulus_gain: f64,
    pub thickness_gain: f64,
    pub modulus_floor: f64,
    pub thickness_floor: f64,
    /// Through-thickness modulus as a fraction of the in-plane modulus at
    /// baseline thickness.
    pub normal_stiffness_ratio: f64,
}

impl MaterialMap {
    pub fn with_coeffs(n: usize) -> Self {
        let mut corpulence_weights = vec![0.0; n];
        if n > 0 {
            corpulence_weights[0] = 1.0;
        }
        if n > 1 {
            corpulence_weights[1] = 0.25;
        }
        Self {
            corpulence_weights,
            modulus_gain: -0.35,
            thickness_gain: 0.3,
            modulus_floor: 100.0,
            thickness_floor: 1e-4,
            normal_stiffness_ratio: 0.6,
        }
    }

    pub fn corpulence(&self, beta: &ShapeCoeffs) -> f64 {
        self.corpulence_weights
            .iter()
            .zip(&beta.beta)
            .map(|(w, b)| w * b)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BodyTemplate {
    pub surface_vertices: Vec<Vec3>,
    /// Index of each surface vertex in `tet_vertices`.
    pub surface_to_tet: Vec<usize>,
    /// Outward-oriented triangles over surface vertex indices.
    pub surface_triangles: Vec<[usize; 3]>,
    pub tet_vertices: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    pub bones: Vec<Bone>,
    pub skinning_weights: SkinWeights,
    /// `3 * n_tet_vertices` rows, one column per shape coefficient.
    pub shape_basis: DMatrix<f64>,
    /// Optional pose correctives: `3 * n_tet_vertices` rows by pose dimension.
    pub pose_correctives: Option<DMatrix<f64>>,
    pub material_baseline: MaterialFields,
    /// Soft-layer thickness per surface vertex.
    pub thickness_baseline: Vec<f64>,
    pub material_map: MaterialMap,
}

impl BodyTemplate {
    pub fn n_bones(&self) -> usize {
        self.bones.len()
    }

    pub fn n_tet_vertices(&self) -> usize {
        self.tet_vertices.len()
    }

    pub fn n_shape_coeffs(&self) -> usize {
        self.shape_basis.ncols()
    }

    /// Bone with the largest weight for each tet vertex.
    pub fn dominant_bones(&self) -> Vec<(usize, f64)> {
        self.skinning_weights
            .iter()
            .map(|w| {
                w.iter()
                    .copied()
                    .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
            })
            .collect()
    }

    /// Element-to-bone partition, see [`tet_bone_partition`].
    pub fn tet_bone_partition(&self) -> Vec<usize> {
        tet_bone_partition(&self.tets, &self.skinning_weights, self.n_bones())
    }

    /// Checks every structural invariant of the template.
    pub fn validate(&self) -> Result<()> {
        let nv = self.tet_vertices.len();
        let nb = self.bones.len();
        if nb == 0 {
            return Err(Error::InvariantViolation("template has no bones".into()));
        }
        for (i, b) in self.bones.iter().enumerate() {
            match (i, b.parent) {
                (0, None) => {}
                (0, Some(_)) => {
                    return Err(Error::InvariantViolation("bone 0 must be the root".into()))
                }
                (_, None) => {
                    return Err(Error::InvariantViolation(format!("bone {i} has no parent")))
                }
                (_, Some(p)) if p >= i => {
                    return Err(Error::InvariantViolation(format!(
                        "bone {i} parent {p} does not precede it (cycle or unordered tree)"
                    )))
                }
                _ => {}
            }
            if !(b.mass > 0.0) {
                return Err(Error::InvariantViolation(format!("bone {i} mass {} not positive", b.mass)));
            }
            if (b.tail - b.head).norm() <= 0.0 {
                return Err(Error::InvariantViolation(format!("bone {i} has tail == head")));
            }
            let sym = (b.inertia_tensor - b.inertia_tensor.transpose()).norm();
            if sym > 1e-12 * b.inertia_tensor.norm().max(1e-300) || b.inertia_tensor.cholesky().is_none() {
                return Err(Error::InvariantViolation(format!(
                    "bone {i} inertia is not symmetric positive definite"
                )));
            }
            if !b.rest_transform.is_normalized(1e-9) {
                return Err(Error::InvariantViolation(format!("bone {i} rest rotation not unit")));
            }
        }
        if self.skinning_weights.len() != nv {
            return Err(Error::InvariantViolation(format!(
                "{} weight lists for {nv} vertices",
                self.skinning_weights.len()
            )));
        }
        for (v, w) in self.skinning_weights.iter().enumerate() {
            let mut sum = 0.0;
            for &(b, x) in w {
                if b >= nb || !(x >= 0.0) {
                    return Err(Error::InvariantViolation(format!(
                        "vertex {v} has invalid weight ({b}, {x})"
                    )));
                }
                sum += x;
            }
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::InvariantViolation(format!(
                    "skinning weights of vertex {v} sum to {sum}"
                )));
            }
        }
        for (i, t) in self.tets.iter().enumerate() {
            if t.iter().any(|&v| v >= nv) {
                return Err(Error::InvariantViolation(format!("tet {i} references a missing vertex")));
            }
            let vol = tet_signed_volume([
                &self.tet_vertices[t[0]],
                &self.tet_vertices[t[1]],
                &self.tet_vertices[t[2]],
                &self.tet_vertices[t[3]],
            ]);
            if !(vol > 0.0) {
                return Err(Error::InvertedElement { tet: i, volume: vol });
            }
        }
        if self.surface_to_tet.len() != self.surface_vertices.len() {
            return Err(Error::InvariantViolation("surface index map length mismatch".into()));
        }
        for (s, &v) in self.surface_to_tet.iter().enumerate() {
            if v >= nv || self.surface_vertices[s] != self.tet_vertices[v] {
                return Err(Error::InvariantViolation(format!(
                    "surface vertex {s} does not map onto a tet vertex"
                )));
            }
        }
        let ns = self.surface_vertices.len();
        if self.surface_triangles.iter().flatten().any(|&i| i >= ns) {
            return Err(Error::InvariantViolation("surface triangle index out of range".into()));
        }
        if self.shape_basis.nrows() != 3 * nv {
            return Err(Error::InvariantViolation(format!(
                "shape basis has {} rows, expected {}",
                self.shape_basis.nrows(),
                3 * nv
            )));
        }
        if let Some(pc) = &self.pose_correctives {
            if pc.nrows() != 3 * nv || pc.ncols() != crate::kinematics::Pose::dimension(nb) {
                return Err(Error::InvariantViolation("pose corrective matrix has wrong shape".into()));
            }
        }
        let m = &self.material_baseline;
        for (name, field) in [
            ("young", &m.young),
            ("poisson", &m.poisson),
            ("density", &m.density),
            ("fung_a", &m.fung_a),
            ("fung_b", &m.fung_b),
        ] {
            if field.len() != nv {
                return Err(Error::InvariantViolation(format!("material field {name} has wrong length")));
            }
        }
        for v in 0..nv {
            if !(m.young[v] > 0.0 && m.density[v] > 0.0 && m.fung_a[v] >= 0.0 && m.fung_b[v] >= 0.0)
                || !(m.poisson[v] > -1.0 && m.poisson[v] < 0.5)
            {
                return Err(Error::InvariantViolation(format!("material at vertex {v} out of range")));
            }
        }
        if self.thickness_baseline.len() != ns || self.thickness_baseline.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvariantViolation("thickness field invalid".into()));
        }
        if self.material_map.corpulence_weights.len() != self.n_shape_coeffs() {
            return Err(Error::InvariantViolation("material map length differs from shape basis".into()));
        }
        Ok(())
    }
}

/// The bone with the largest summed weight over each tet's four vertices
/// (lowest index wins ties).
pub fn tet_bone_partition(tets: &[[usize; 4]], weights: &SkinWeights, n_bones: usize) -> Vec<usize> {
    tets.iter()
        .map(|t| {
            let mut acc = vec![0.0; n_bones];
            for &v in t {
                for &(b, w) in &weights[v] {
                    acc[b] += w;
                }
            }
            let mut best = 0;
            for b in 1..n_bones {
                if acc[b] > acc[best] {
                    best = b;
                }
            }
            best
        })
        .collect()
}

/// Mass, center of mass and inertia of each bone, integrated exactly over
/// the tets assigned to it by [`BodyTemplate::tet_bone_partition`].
#[derive(Clone, Debug, PartialEq)]
pub struct BoneInertia {
    pub mass: f64,
    /// Bone frame.
    pub center_of_mass: Vec3,
    /// About the center of mass, bone frame.
    pub inertia: Mat3,
}

pub fn integrate_bone_inertia(
    bones: &[Bone],
    tets: &[[usize; 4]],
    partition: &[usize],
    positions: &[Vec3],
    density: &[f64],
) -> Vec<BoneInertia> {
    let nb = bones.len();
    let mut mass = vec![0.0; nb];
    let mut first = vec![Vec3::zeros(); nb];
    let mut second = vec![Mat3::zeros(); nb];
    for (t, &b) in tets.iter().zip(partition) {
        let p = [positions[t[0]], positions[t[1]], positions[t[2]], positions[t[3]]];
        let vol = tet_signed_volume([&p[0], &p[1], &p[2], &p[3]]);
        let rho = t.iter().map(|&v| density[v]).sum::<f64>() / 4.0;
        let m = rho * vol;
        let sum = p[0] + p[1] + p[2] + p[3];
        mass[b] += m;
        first[b] += sum * (m / 4.0);
        // Exact second moment of a tetrahedron with uniform density.
        let mut s = sum * sum.transpose();
        for x in &p {
            s += x * x.transpose();
        }
        second[b] += s * (m / 20.0);
    }
    (0..nb)
        .map(|b| {
            if mass[b] <= 0.0 {
                return BoneInertia {
                    mass: 0.0,
                    center_of_mass: Vec3::zeros(),
                    inertia: Mat3::zeros(),
                };
            }
            let com = first[b] / mass[b];
            let central = second[b] - com * com.transpose() * mass[b];
            let inertia_world = Mat3::identity() * central.trace() - central;
            let r = bones[b].rest_transform.rotation_matrix();
            let local_com = r.transpose() * (com - bones[b].rest_transform.translation);
            let local_inertia = r.transpose() * inertia_world * r;
            BoneInertia {
                mass: mass[b],
                center_of_mass: local_com,
                inertia: (local_inertia + local_inertia.transpose()) * 0.5,
            }
        })
        .collect()
}
