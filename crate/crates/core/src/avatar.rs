//! The simulated avatar: a skinned body whose DoFs are per-bone rigid
//! transforms, optionally followed by an unposed displacement field (full
//! FEM) or the reduced coordinates of a handle basis.
//!
//! DoF layout: `[bone 0: rx ry rz tx ty tz] ... [soft block]`, where the
//! soft block is `3 n_tet_vertices` displacements or `3 n_point_handles`
//! reduced coordinates.

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body::{apply_shape, integrate_bone_inertia, material_from_shape, tet_bone_partition, Bone, BodyTemplate, ShapeCoeffs, ShapedMaterial, SkinWeights};
use crate::contact::{build_capsule_proxies, point_penalties, vertex_areas, CapsuleProxy, Collider, Shape};
use crate::error::{check_len, Error, Result};
use crate::fem::{ElementMaterial, FemMesh};
use crate::kinematics::{bone_dofs_from_transforms, bone_frames, pose_with_jacobian, vertex_bone_jacobian, BoneFrame, Pose, RigidTransform, SkinTransforms, BONE_DOFS};
use crate::math::{point_segment_distance, segment_parameter, Mat3, Quat, Vec3};
use crate::mocap::MocapSequence;
use crate::rom::{build_handle_basis, greedy_cubature, reduced_elastic, train_elastic_cubature, CubatureData, CubatureScheme, CubatureSettings, SubspaceBasis};
use crate::sim::{Accumulator, DofModel, EnergyTerm, HessianBuilder, Level, SimulationSettings, Simulable};
use crate::skeleton::{bone_gravity_energy, joint_energy, joints_from_bones, rigid_mass_matrix, tracking_energy, BranchWarnings, JointSpec, TrackingSpec, TrackingTarget};
use crate::sparse::TripletMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AvatarOptions {
    /// Shape coefficients; empty means the template shape.
    pub beta: Vec<f64>,
    pub point_handles: usize,
    /// Minimum dominant skinning weight of a bone-core vertex.
    pub core_weight: f64,
    /// Bone-core radius as a fraction of the capsule proxy radius.
    pub core_radius: f64,
    pub elastic_cubature: CubatureSettings,
    pub inertial_cubature: CubatureSettings,
    /// Diagonal floor of the cubature mass, relative to the full mass
    /// diagonal at rest.
    pub inertial_floor: f64,
    pub seed: u64,
    /// Directory for cached reduced bases and cubature schemes.
    pub cache_dir: Option<PathBuf>,
}

impl Default for AvatarOptions {
    fn default() -> Self {
        Self {
            beta: Vec::new(),
            point_handles: 40,
            core_weight: 0.95,
            core_radius: 0.5,
            elastic_cubature: CubatureSettings {
                max_points: 300,
                ..CubatureSettings::default()
            },
            inertial_cubature: CubatureSettings {
                samples: 1000,
                max_points: 400,
                min_points: 60,
                force_probes: 0,
                ..CubatureSettings::default()
            },
            inertial_floor: 1e-2,
            seed: 0,
            cache_dir: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FemLayer {
    pub mesh: FemMesh,
    /// Lumped mass per tet vertex.
    pub masses: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RomLayer {
    pub mesh: FemMesh,
    pub masses: Vec<f64>,
    pub basis: SubspaceBasis,
    pub elastic_cubature: Option<CubatureScheme>,
    /// Selected vertices with mass weights.
    pub inertial_cubature: Option<CubatureScheme>,
    /// Diagonal added to the cubature mass matrix.
    pub mass_floor: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum SoftLayer {
    None,
    Fem(FemLayer),
    Rom(RomLayer),
}

impl SoftLayer {
    pub fn mesh(&self) -> Option<&FemMesh> {
        match self {
            SoftLayer::None => None,
            SoftLayer::Fem(l) => Some(&l.mesh),
            SoftLayer::Rom(l) => Some(&l.mesh),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AvatarModel {
    pub bones: Vec<Bone>,
    /// Shaped rest positions of the tet vertices.
    pub rest: Vec<Vec3>,
    pub weights: SkinWeights,
    pub tets: Vec<[usize; 4]>,
    /// Tet vertex of each surface vertex.
    pub surface: Vec<usize>,
    pub triangles: Vec<[usize; 3]>,
    /// Rest area weight of each surface vertex.
    pub surface_areas: Vec<f64>,
    /// `3 n_tet_vertices` by pose dimension.
    pub correctives: Option<DMatrix<f64>>,
    pub proxies: Vec<CapsuleProxy>,
    /// Vertices rigidly held by each bone.
    pub core: Vec<Vec<usize>>,
    pub material: ShapedMaterial,
    pub soft: SoftLayer,
}

/// Kinematic quantities at one DoF vector.
#[derive(Clone, Debug)]
pub struct AvatarConfig {
    pub frames: Vec<BoneFrame>,
    pub skin: SkinTransforms,
    /// Rest plus displacement and pose correctives, per tet vertex.
    pub unposed: Vec<Vec3>,
    /// Skinned positions, per tet vertex.
    pub world: Vec<Vec3>,
    /// Rows of `d pose / d q` when correctives are active.
    pose_rows: Vec<Vec<(usize, f64)>>,
}

impl AvatarModel {
    /// Shapes the template and builds the soft layer the settings ask for.
    pub fn build(template: &BodyTemplate, settings: &SimulationSettings, options: &AvatarOptions) -> Result<Self> {
        settings.validate()?;
        template.validate()?;
        let beta = if options.beta.is_empty() {
            ShapeCoeffs::zeros(template.n_shape_coeffs())
        } else {
            ShapeCoeffs::new(options.beta.clone())
        };
        let rest = apply_shape(template, &beta)?;
        let material = material_from_shape(template, &beta)?;
        let nb = template.n_bones();

        let mut bones = template.bones.clone();
        let partition = tet_bone_partition(&template.tets, &template.skinning_weights, nb);
        let inertia = integrate_bone_inertia(&bones, &template.tets, &partition, &rest, &material.density);
        for (b, bi) in bones.iter_mut().zip(inertia) {
            if bi.mass > 0.0 {
                b.mass = bi.mass;
                b.center_of_mass = bi.center_of_mass;
                b.inertia_tensor = bi.inertia;
            }
        }
        let proxies = build_capsule_proxies(&bones, &rest, &template.skinning_weights)?;
        let surface_pos: Vec<Vec3> = template.surface_to_tet.iter().map(|&v| rest[v]).collect();
        let surface_areas = vertex_areas(&surface_pos, &template.surface_triangles);
        let core = core_sets(&bones, &rest, &template.skinning_weights, &proxies, options);

        let mut model = Self {
            bones,
            rest,
            weights: template.skinning_weights.clone(),
            tets: template.tets.clone(),
            surface: template.surface_to_tet.clone(),
            triangles: template.surface_triangles.clone(),
            surface_areas,
            correctives: template.pose_correctives.clone(),
            proxies,
            core,
            material,
            soft: SoftLayer::None,
        };
        if let Some(c) = &model.correctives {
            check_len("pose corrective rows", 3 * model.rest.len(), c.nrows())?;
            check_len("pose corrective columns", Pose::dimension(nb), c.ncols())?;
        }
        if !settings.soft_tissue {
            return Ok(model);
        }
        let mesh = FemMesh::new(&model.rest, &model.tets, model.element_materials()?)?;
        let masses = mesh.lumped_masses();
        if !settings.reduced_model {
            model.soft = SoftLayer::Fem(FemLayer { mesh, masses });
            return Ok(model);
        }

        let key = model.cache_key(&mesh, settings, options);
        let cached = options.cache_dir.as_ref().and_then(|d| RomCache::load(&d.join(format!("rom-{key}.json")), &key));
        let cache = match cached {
            Some(c) => c,
            None => {
                let c = model.train_rom(mesh.clone(), masses.clone(), settings, options)?;
                let c = RomCache { key: key.clone(), ..c };
                if let Some(d) = &options.cache_dir {
                    c.save(&d.join(format!("rom-{key}.json")))?;
                }
                c
            }
        };
        model.soft = SoftLayer::Rom(RomLayer {
            mesh,
            masses,
            basis: cache.basis,
            elastic_cubature: cache.elastic,
            inertial_cubature: cache.inertial,
            mass_floor: cache.mass_floor,
        });
        Ok(model)
    }

    fn train_rom(&mut self, mesh: FemMesh, masses: Vec<f64>, settings: &SimulationSettings, options: &AvatarOptions) -> Result<RomCache> {
        let taken: usize = self.core.iter().map(|c| c.len()).sum();
        let free = self.surface.len().saturating_sub(taken);
        let n_points = options.point_handles.min(free).max(1);
        let basis = build_handle_basis(&self.rest, &self.tets, &self.surface, self.core.clone(), n_points, options.seed)?;
        let elastic = if settings.elastic_cubature {
            Some(train_elastic_cubature(&mesh, &basis, &options.elastic_cubature, options.seed)?)
        } else {
            None
        };
        self.soft = SoftLayer::Rom(RomLayer {
            mesh,
            masses,
            basis: basis.clone(),
            elastic_cubature: elastic.clone(),
            inertial_cubature: None,
            mass_floor: Vec::new(),
        });
        let (inertial, mass_floor) = if settings.inertial_cubature {
            let (scheme, full_diag) = self.train_inertial_cubature(&options.inertial_cubature, options.seed)?;
            (Some(scheme), full_diag.iter().map(|d| d * options.inertial_floor).collect())
        } else {
            (None, Vec::new())
        };
        Ok(RomCache {
            key: String::new(),
            basis,
            elastic,
            inertial,
            mass_floor,
        })
    }

    /// Vertex quadrature for the kinetic energy: random velocities at rest,
    /// exact values from all vertices. Also returns the full mass diagonal.
    fn train_inertial_cubature(&self, settings: &CubatureSettings, seed: u64) -> Result<(CubatureScheme, Vec<f64>)> {
        let SoftLayer::Rom(layer) = &self.soft else {
            return Err(Error::InvalidConfig("inertial cubature requires the reduced model".into()));
        };
        if settings.samples < 5 {
            return Err(Error::InvalidConfig("cubature needs at least 5 training states".into()));
        }
        let (anchor, q) = self.rest_state();
        let cfg = self.configure(&anchor, &q)?;
        let n = self.dof_count();
        let nv = self.rest.len();
        let columns: Vec<Vec<(usize, Vec3)>> = (0..nv)
            .into_par_iter()
            .map(|v| {
                let mut c = Vec::new();
                self.vertex_columns(&cfg, v, &mut c);
                c
            })
            .collect();
        let mut full_diag = vec![0.0; n];
        for (cols, m) in columns.iter().zip(&layer.masses) {
            for (i, c) in cols {
                full_diag[*i] += m * c.norm_squared();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1e27);
        let (nb, bd) = (self.n_bones(), self.bone_dofs());
        let n_handles = layer.basis.dim() / 3;
        let mut data = |count: usize| -> CubatureData {
            let mut a = DMatrix::zeros(count, nv);
            let mut target = nalgebra::DVector::zeros(count);
            for r in 0..count {
                // Whole-body, single-bone and single-handle velocities, so
                // light blocks are matched as well as the bulk.
                let block = match r % 3 {
                    0 => 0..n,
                    1 => {
                        let b = rng.random_range(0..nb);
                        BONE_DOFS * b..BONE_DOFS * (b + 1)
                    }
                    _ => {
                        let k = rng.random_range(0..n_handles);
                        bd + 3 * k..bd + 3 * k + 3
                    }
                };
                let mut qd = vec![0.0; n];
                for i in block {
                    qd[i] = StandardNormal.sample(&mut rng);
                }
                for (v, cols) in columns.iter().enumerate() {
                    let mut x = Vec3::zeros();
                    for (i, c) in cols {
                        x += c * qd[*i];
                    }
                    a[(r, v)] = x.norm_squared();
                }
                let t: f64 = (0..nv).map(|v| a[(r, v)] * layer.masses[v]).sum();
                let s = 1.0 / t.max(1e-300);
                a.row_mut(r).scale_mut(s);
                target[r] = 1.0;
            }
            CubatureData {
                columns: a,
                target,
                energy_rows: (0..count).collect(),
            }
        };
        let hold_n = (settings.samples / 5).max(1);
        let hold = data(hold_n);
        let train = data(settings.samples - hold_n);
        // Fewer vertices than DoFs leaves the sampled mass rank deficient.
        let settings = CubatureSettings {
            min_points: settings.min_points.max(n),
            ..settings.clone()
        };
        Ok((greedy_cubature(&train, &hold, &settings), full_diag))
    }

    fn cache_key(&self, mesh: &FemMesh, settings: &SimulationSettings, options: &AvatarOptions) -> String {
        let mut h = Sha256::new();
        let mut f = |x: f64| h.update(x.to_le_bytes());
        for p in &self.rest {
            p.iter().for_each(|x| f(*x));
        }
        for w in &self.weights {
            for &(b, x) in w {
                f(b as f64);
                f(x);
            }
        }
        for m in &mesh.materials {
            m.stiffness.iter().chain(m.frame.iter()).for_each(|x| f(*x));
            f(m.fung_a);
            f(m.fung_b);
            f(m.density);
        }
        for t in &self.tets {
            t.iter().for_each(|&v| f(v as f64));
        }
        for c in &self.core {
            f(c.len() as f64);
            c.iter().for_each(|&v| f(v as f64));
        }
        let tail = format!(
            "{}|{}|{}|{}|{:?}|{:?}|{}",
            settings.elastic_cubature,
            settings.inertial_cubature,
            options.point_handles,
            options.seed,
            options.elastic_cubature,
            options.inertial_cubature,
            options.inertial_floor
        );
        h.update(tail.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Per-element orthotropic materials: the third axis points away from
    /// the element's bone (through the soft layer), with its own modulus.
    fn element_materials(&self) -> Result<Vec<ElementMaterial>> {
        let m = &self.material;
        self.tets
            .iter()
            .map(|t| {
                let avg = |f: &[f64]| t.iter().map(|&v| f[v]).sum::<f64>() / 4.0;
                let (e, en, nu, rho, a, b) = (
                    avg(&m.young),
                    avg(&m.normal_young),
                    avg(&m.poisson),
                    avg(&m.density),
                    avg(&m.fung_a),
                    avg(&m.fung_b),
                );
                let mut per_bone = vec![0.0; self.bones.len()];
                for &v in t {
                    for &(bone, w) in &self.weights[v] {
                        per_bone[bone] += w;
                    }
                }
                let bone = (0..per_bone.len()).fold(0, |best, i| if per_bone[i] > per_bone[best] { i } else { best });
                let (h, tl) = (self.bones[bone].head, self.bones[bone].tail);
                let c = t.iter().map(|&v| self.rest[v]).sum::<Vec3>() / 4.0;
                let s = segment_parameter(&c, &h, &tl);
                let radial = c - (h + (tl - h) * s);
                if radial.norm() < 1e-9 {
                    return ElementMaterial::isotropic(e, nu, a, b, rho);
                }
                let n = radial.normalize();
                let axis = (tl - h).normalize();
                let mut e1 = axis - n * n.dot(&axis);
                if e1.norm() < 1e-9 {
                    e1 = n.cross(&Vec3::x());
                    if e1.norm() < 1e-9 {
                        e1 = n.cross(&Vec3::y());
                    }
                }
                let e1 = e1.normalize();
                let e2 = n.cross(&e1);
                ElementMaterial::orthotropic(Mat3::from_columns(&[e1, e2, n]), [e, e, en], nu, a, b, rho)
            })
            .collect()
    }

    pub fn n_bones(&self) -> usize {
        self.bones.len()
    }

    pub fn bone_dofs(&self) -> usize {
        BONE_DOFS * self.bones.len()
    }

    pub fn soft_dofs(&self) -> usize {
        match &self.soft {
            SoftLayer::None => 0,
            SoftLayer::Fem(_) => 3 * self.rest.len(),
            SoftLayer::Rom(l) => l.basis.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match &self.soft {
            SoftLayer::None => "articulated",
            SoftLayer::Fem(_) => "fem",
            SoftLayer::Rom(_) => "rom",
        }
    }

    /// Lumped mass per tet vertex (soft models) or `None`.
    pub fn vertex_masses(&self) -> Option<&[f64]> {
        match &self.soft {
            SoftLayer::None => None,
            SoftLayer::Fem(l) => Some(&l.masses),
            SoftLayer::Rom(l) => Some(&l.masses),
        }
    }

    /// Unposed displacement of tet vertex `v` at `q`.
    pub fn displacement(&self, q: &[f64], v: usize) -> Vec3 {
        let off = self.bone_dofs();
        match &self.soft {
            SoftLayer::None => Vec3::zeros(),
            SoftLayer::Fem(_) => Vec3::new(q[off + 3 * v], q[off + 3 * v + 1], q[off + 3 * v + 2]),
            SoftLayer::Rom(l) => l.basis.vertex_displacement(v, &q[off..]),
        }
    }

    /// Full displacement vector (`3 n_tet_vertices`) at `q`.
    pub fn displacement_field(&self, q: &[f64]) -> Vec<f64> {
        let off = self.bone_dofs();
        match &self.soft {
            SoftLayer::None => vec![0.0; 3 * self.rest.len()],
            SoftLayer::Fem(_) => q[off..].to_vec(),
            SoftLayer::Rom(l) => l.basis.displacement(&q[off..]).expect("layout checked"),
        }
    }

    /// Columns of `d x_v / d q` for tet vertex `v`, as `(dof, 3-vector)`.
    /// Duplicated DoFs add.
    pub fn vertex_columns(&self, cfg: &AvatarConfig, v: usize, out: &mut Vec<(usize, Vec3)>) {
        out.clear();
        for (b, j) in vertex_bone_jacobian(&self.bones, &cfg.frames, &cfg.skin, &cfg.unposed[v], &self.weights[v]) {
            for k in 0..BONE_DOFS {
                out.push((BONE_DOFS * b + k, j.column(k).into_owned()));
            }
        }
        let needs_blend = !matches!(self.soft, SoftLayer::None) || self.correctives.is_some();
        if !needs_blend {
            return;
        }
        let blend = cfg.skin.rotation_blend(&self.weights[v]);
        let off = self.bone_dofs();
        match &self.soft {
            SoftLayer::None => {}
            SoftLayer::Fem(_) => {
                for i in 0..3 {
                    out.push((off + 3 * v + i, blend.column(i).into_owned()));
                }
            }
            SoftLayer::Rom(l) => {
                for (k, w) in l.basis.point_weights(v) {
                    for i in 0..3 {
                        out.push((off + 3 * k + i, blend.column(i) * w));
                    }
                }
            }
        }
        if let Some(c) = &self.correctives {
            for (p, row) in cfg.pose_rows.iter().enumerate() {
                let cv = Vec3::new(c[(3 * v, p)], c[(3 * v + 1, p)], c[(3 * v + 2, p)]);
                if cv == Vec3::zeros() {
                    continue;
                }
                let d = blend * cv;
                for &(col, val) in row {
                    out.push((col, d * val));
                }
            }
        }
    }

    /// `sum_v m_v J_v^T J_v` over the given `(vertex, mass)` samples.
    fn skinned_mass(&self, cfg: &AvatarConfig, samples: &[(usize, f64)], floor: &[f64]) -> TripletMatrix {
        let n = self.dof_count();
        let dd = self.dense_dofs();
        let parts: Vec<HessianBuilder> = samples
            .par_chunks(256)
            .map(|chunk| {
                let mut b = HessianBuilder::new(n, dd);
                let mut cols = Vec::new();
                for &(v, m) in chunk {
                    self.vertex_columns(cfg, v, &mut cols);
                    for (i, ci) in &cols {
                        for (j, cj) in &cols {
                            b.add(*i, *j, m * ci.dot(cj));
                        }
                    }
                }
                b
            })
            .collect();
        let mut out = HessianBuilder::new(n, dd);
        for p in parts {
            out.merge(p);
        }
        for (i, f) in floor.iter().enumerate() {
            out.add(i, i, *f);
        }
        out.finish()
    }

    /// Capsule proxy segments in world space.
    pub fn world_capsules(&self, cfg: &AvatarConfig) -> Vec<(Vec3, Vec3, f64)> {
        self.proxies
            .iter()
            .map(|c| {
                let (a, b) = c.world(&cfg.frames[c.bone]);
                (a, b, c.radius)
            })
            .collect()
    }

    pub fn surface_positions(&self, cfg: &AvatarConfig) -> Vec<Vec3> {
        self.surface.iter().map(|&v| cfg.world[v]).collect()
    }

    /// A DoF vector placing the bones at the world transforms of `pose`
    /// with zero rotation increments, relative to `anchor`.
    pub fn state_for_pose(&self, pose: &Pose) -> Result<(Vec<f64>, Vec<f64>)> {
        let world = crate::kinematics::forward_kinematics(&self.bones, pose)?;
        let (base, bq) = bone_dofs_from_transforms(&world);
        let mut q = vec![0.0; self.dof_count()];
        q[..bq.len()].copy_from_slice(&bq);
        Ok((quats_to_anchor(&base), q))
    }
}

fn quats_to_anchor(q: &[Quat]) -> Vec<f64> {
    q.iter().flat_map(|r| [r.w, r.i, r.j, r.k]).collect()
}

fn anchor_to_quats(a: &[f64]) -> Vec<Quat> {
    a.chunks(4)
        .map(|c| Quat::from_quaternion(nalgebra::Quaternion::new(c[0], c[1], c[2], c[3])))
        .collect()
}

/// Vertices each bone holds rigidly: dominant weight above the threshold
/// and close to the bone segment. A bone with none keeps its nearest
/// dominant vertex.
fn core_sets(bones: &[Bone], rest: &[Vec3], weights: &SkinWeights, proxies: &[CapsuleProxy], options: &AvatarOptions) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); bones.len()];
    let mut nearest: Vec<Option<(usize, f64)>> = vec![None; bones.len()];
    for (v, w) in weights.iter().enumerate() {
        let (b, x) = w.iter().copied().fold((usize::MAX, f64::NEG_INFINITY), |a, y| if y.1 > a.1 { y } else { a });
        if b == usize::MAX {
            continue;
        }
        let d = point_segment_distance(&rest[v], &bones[b].head, &bones[b].tail);
        if nearest[b].is_none_or(|(_, nd)| d < nd) {
            nearest[b] = Some((v, d));
        }
        if x > options.core_weight && d < options.core_radius * proxies[b].radius {
            sets[b].push(v);
        }
    }
    for (b, set) in sets.iter_mut().enumerate() {
        if set.is_empty() {
            if let Some((v, _)) = nearest[b] {
                set.push(v);
            }
        }
    }
    sets
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RomCache {
    key: String,
    basis: SubspaceBasis,
    elastic: Option<CubatureScheme>,
    inertial: Option<CubatureScheme>,
    mass_floor: Vec<f64>,
}

impl RomCache {
    fn load(path: &std::path::Path, key: &str) -> Option<Self> {
        let text = std::fs::read_to_string(path).ok()?;
        let c: RomCache = serde_json::from_str(&text).ok()?;
        (c.key == key).then_some(c)
    }

    fn save(&self, path: &std::path::Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

impl DofModel for AvatarModel {
    type Config = AvatarConfig;

    fn dof_count(&self) -> usize {
        self.bone_dofs() + self.soft_dofs()
    }

    fn dense_dofs(&self) -> usize {
        match &self.soft {
            SoftLayer::Rom(l) => self.bone_dofs() + l.basis.dim(),
            _ => self.bone_dofs(),
        }
    }

    fn rest_state(&self) -> (Vec<f64>, Vec<f64>) {
        let world: Vec<RigidTransform> = self.bones.iter().map(|b| b.rest_transform).collect();
        let (base, bq) = bone_dofs_from_transforms(&world);
        let mut q = vec![0.0; self.dof_count()];
        q[..bq.len()].copy_from_slice(&bq);
        (quats_to_anchor(&base), q)
    }

    fn configure(&self, anchor: &[f64], q: &[f64]) -> Result<AvatarConfig> {
        check_len("anchor", 4 * self.n_bones(), anchor.len())?;
        check_len("state q", self.dof_count(), q.len())?;
        let base = anchor_to_quats(anchor);
        let frames = bone_frames(&base, &q[..self.bone_dofs()]);
        let skin = SkinTransforms::new(&self.bones, &frames);
        let mut unposed: Vec<Vec3> = (0..self.rest.len()).map(|v| self.rest[v] + self.displacement(q, v)).collect();
        let mut pose_rows = Vec::new();
        if let Some(c) = &self.correctives {
            let pj = pose_with_jacobian(&self.bones, &frames)?;
            let theta = nalgebra::DVector::from_column_slice(&pj.pose);
            let off = c * theta;
            for (v, p) in unposed.iter_mut().enumerate() {
                *p += Vec3::new(off[3 * v], off[3 * v + 1], off[3 * v + 2]);
            }
            pose_rows = vec![Vec::new(); pj.pose.len()];
            for &(r, col, val) in &pj.jacobian.entries {
                pose_rows[r].push((col, val));
            }
        }
        let world = unposed.iter().zip(&self.weights).map(|(p, w)| skin.skin_point(p, w)).collect();
        Ok(AvatarConfig {
            frames,
            skin,
            unposed,
            world,
            pose_rows,
        })
    }

    fn mass_matrix(&self, cfg: &AvatarConfig) -> TripletMatrix {
        match &self.soft {
            SoftLayer::None => rigid_mass_matrix(&self.bones, &cfg.frames),
            SoftLayer::Fem(l) => self.skinned_mass(cfg, &l.masses.iter().copied().enumerate().collect::<Vec<_>>(), &[]),
            SoftLayer::Rom(l) => match &l.inertial_cubature {
                Some(c) => {
                    let samples: Vec<(usize, f64)> = c.indices.iter().copied().zip(c.weights.iter().copied()).collect();
                    self.skinned_mass(cfg, &samples, &l.mass_floor)
                }
                None => self.skinned_mass(cfg, &l.masses.iter().copied().enumerate().collect::<Vec<_>>(), &[]),
            },
        }
    }

    fn rebase(&self, anchor: &mut [f64], q: &mut [f64]) {
        let mut base = anchor_to_quats(anchor);
        for (b, r) in base.iter_mut().enumerate() {
            let o = BONE_DOFS * b;
            let w = Vec3::new(q[o], q[o + 1], q[o + 2]);
            *r = Quat::from_scaled_axis(w) * *r;
            q[o..o + 3].iter_mut().for_each(|x| *x = 0.0);
        }
        anchor.copy_from_slice(&quats_to_anchor(&base));
    }

    fn kinematic_dofs(&self) -> Vec<usize> {
        match &self.soft {
            SoftLayer::Fem(_) => {
                let off = self.bone_dofs();
                let mut out: Vec<usize> = self.core.iter().flatten().flat_map(|&v| (0..3).map(move |i| off + 3 * v + i)).collect();
                out.sort_unstable();
                out.dedup();
                out
            }
            _ => Vec::new(),
        }
    }

    fn node_count(&self) -> usize {
        self.surface.len()
    }

    fn nodes(&self, cfg: &AvatarConfig) -> Vec<Vec3> {
        self.surface_positions(cfg)
    }

    fn nodes_jacobian(&self, cfg: &AvatarConfig) -> TripletMatrix {
        let mut jac = TripletMatrix::new(3 * self.surface.len(), self.dof_count());
        let mut cols = Vec::new();
        for (s, &v) in self.surface.iter().enumerate() {
            self.vertex_columns(cfg, v, &mut cols);
            for (c, x) in &cols {
                for i in 0..3 {
                    if x[i] != 0.0 {
                        jac.push(3 * s + i, *c, x[i]);
                    }
                }
            }
        }
        jac
    }

    fn pose_jacobian(&self, cfg: &AvatarConfig) -> Result<(Vec<f64>, TripletMatrix)> {
        let pj = pose_with_jacobian(&self.bones, &cfg.frames)?;
        let mut jac = TripletMatrix::new(pj.pose.len(), self.dof_count());
        jac.entries = pj.jacobian.entries;
        Ok((pj.pose, jac))
    }
}

/// Joint attachment springs.
pub struct JointTerm {
    pub joints: Vec<JointSpec>,
}

impl EnergyTerm<AvatarModel> for JointTerm {
    fn name(&self) -> &str {
        "joints"
    }

    fn evaluate(&self, _m: &AvatarModel, cfg: &AvatarConfig, _q: &[f64], out: &mut Accumulator) -> Result<()> {
        joint_energy(&self.joints, &cfg.frames, out);
        Ok(())
    }
}

/// Rotation springs toward the active frame of a motion clip. Each
/// `pre_update` advances one frame, holding the last.
pub struct TrackingTerm {
    pub spec: TrackingSpec,
    pub mocap: MocapSequence,
    cursor: usize,
    target: TrackingTarget,
    pub warnings: BranchWarnings,
}

impl TrackingTerm {
    pub fn new(bones: &[Bone], spec: TrackingSpec, mocap: MocapSequence) -> Result<Self> {
        spec.validate(bones.len())?;
        mocap.validate(Some(bones.len()))?;
        let target = TrackingTarget::from_pose(bones, mocap.frame(0))?;
        Ok(Self {
            spec,
            mocap,
            cursor: 0,
            target,
            warnings: BranchWarnings::default(),
        })
    }

    /// Index of the frame being tracked.
    pub fn active_frame(&self) -> usize {
        self.cursor.saturating_sub(1).min(self.mocap.len() - 1)
    }
}

impl EnergyTerm<AvatarModel> for TrackingTerm {
    fn name(&self) -> &str {
        "tracking"
    }

    fn evaluate(&self, m: &AvatarModel, cfg: &AvatarConfig, _q: &[f64], out: &mut Accumulator) -> Result<()> {
        let clamped = tracking_energy(&m.bones, &cfg.frames, &self.spec, &self.target, out);
        self.warnings.add(clamped);
        Ok(())
    }

    fn pre_update(&mut self, m: &AvatarModel, _time: f64) -> Result<()> {
        let i = self.cursor.min(self.mocap.len() - 1);
        self.target = TrackingTarget::from_pose(&m.bones, self.mocap.frame(i))?;
        self.cursor += 1;
        Ok(())
    }
}

/// Gravity on bone masses (articulated) or on lumped vertex masses.
pub struct GravityTerm {
    pub gravity: Vec3,
}

impl EnergyTerm<AvatarModel> for GravityTerm {
    fn name(&self) -> &str {
        "gravity"
    }

    fn evaluate(&self, m: &AvatarModel, cfg: &AvatarConfig, _q: &[f64], out: &mut Accumulator) -> Result<()> {
        let Some(masses) = m.vertex_masses() else {
            bone_gravity_energy(&m.bones, &cfg.frames, &self.gravity, out);
            return Ok(());
        };
        for (x, mv) in cfg.world.iter().zip(masses) {
            out.value -= mv * self.gravity.dot(x);
        }
        if out.wants_gradient() {
            let mut cols = Vec::new();
            for (v, mv) in masses.iter().enumerate() {
                m.vertex_columns(cfg, v, &mut cols);
                for (i, c) in &cols {
                    out.gradient[*i] -= mv * c.dot(&self.gravity);
                }
            }
        }
        Ok(())
    }
}

/// Soft-tissue strain energy (full or reduced).
pub struct ElasticTerm;

impl EnergyTerm<AvatarModel> for ElasticTerm {
    fn name(&self) -> &str {
        "elastic"
    }

    fn evaluate(&self, m: &AvatarModel, _cfg: &AvatarConfig, q: &[f64], out: &mut Accumulator) -> Result<()> {
        let off = m.bone_dofs();
        let hessian = out.wants_hessian();
        match &m.soft {
            SoftLayer::None => {}
            SoftLayer::Fem(l) => {
                if out.level == Level::Value {
                    out.value += l.mesh.energy(&q[off..])?;
                    return Ok(());
                }
                let (v, g, h) = l.mesh.assemble(&q[off..], hessian, true)?;
                out.value += v;
                for (i, x) in g.iter().enumerate() {
                    out.gradient[off + i] += x;
                }
                for (r, c, x) in h {
                    out.hessian.add(off + r, off + c, x);
                }
            }
            SoftLayer::Rom(l) => {
                let (v, g, h) = reduced_elastic(&l.mesh, &l.basis, l.elastic_cubature.as_ref(), &q[off..], hessian, true)?;
                out.value += v;
                if out.wants_gradient() {
                    for (i, x) in g.iter().enumerate() {
                        out.gradient[off + i] += x;
                    }
                }
                if let Some(h) = h {
                    for c in 0..h.ncols() {
                        for r in 0..h.nrows() {
                            if h[(r, c)] != 0.0 {
                                out.hessian.add(off + r, off + c, h[(r, c)]);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Penalties of surface vertices against analytic colliders.
pub struct ContactTerm {
    pub colliders: Vec<Collider>,
    pub default_stiffness: f64,
    shapes: Vec<(Shape, f64)>,
}

impl ContactTerm {
    pub fn new(colliders: Vec<Collider>, default_stiffness: f64) -> Result<Self> {
        for c in &colliders {
            c.validate()?;
        }
        let mut t = Self {
            colliders,
            default_stiffness,
            shapes: Vec::new(),
        };
        t.set_time(0.0);
        Ok(t)
    }

    pub fn set_time(&mut self, time: f64) {
        self.shapes = self
            .colliders
            .iter()
            .map(|c| (c.shape_at(time), c.stiffness.unwrap_or(self.default_stiffness)))
            .collect();
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.shapes.iter().map(|s| s.0.clone()).collect()
    }
}

impl EnergyTerm<AvatarModel> for ContactTerm {
    fn name(&self) -> &str {
        "contact"
    }

    fn evaluate(&self, m: &AvatarModel, cfg: &AvatarConfig, _q: &[f64], out: &mut Accumulator) -> Result<()> {
        let points = m.surface_positions(cfg);
        let mut cols = Vec::new();
        let mut normal_cols = Vec::new();
        for p in point_penalties(&points, &m.surface_areas, &self.shapes) {
            out.value += p.value;
            if !out.wants_gradient() {
                continue;
            }
            m.vertex_columns(cfg, m.surface[p.point], &mut cols);
            normal_cols.clear();
            normal_cols.extend(cols.iter().map(|(i, c)| (*i, c.dot(&p.normal))));
            out.add_gauss_newton(&normal_cols, -p.stiffness * p.depth, p.stiffness);
        }
        Ok(())
    }

    fn pre_update(&mut self, _m: &AvatarModel, time: f64) -> Result<()> {
        self.set_time(time);
        Ok(())
    }
}

/// Registers the energy terms for `settings` on a new simulable at rest.
pub fn make_simulable(
    model: AvatarModel,
    settings: &SimulationSettings,
    mocap: Option<&MocapSequence>,
    colliders: &[Collider],
) -> Result<Simulable<AvatarModel>> {
    settings.validate()?;
    let expect_soft = settings.soft_tissue;
    let expect_rom = settings.reduced_model;
    let ok = match &model.soft {
        SoftLayer::None => !expect_soft,
        SoftLayer::Fem(_) => expect_soft && !expect_rom,
        SoftLayer::Rom(l) => {
            expect_rom
                && l.elastic_cubature.is_some() == settings.elastic_cubature
                && l.inertial_cubature.is_some() == settings.inertial_cubature
        }
    };
    if !ok {
        return Err(Error::InvalidConfig(format!("model built as `{}` does not match the simulation flags", model.kind())));
    }
    let s = &settings.stiffness;
    let joints = if model.n_bones() > 1 { joints_from_bones(&model.bones, s.joint)? } else { Vec::new() };
    let tracking = match mocap {
        Some(m) => Some(TrackingTerm::new(
            &model.bones,
            TrackingSpec::uniform(model.n_bones(), s.tracking, s.root_rotation, s.root_translation),
            m.clone(),
        )?),
        None => None,
    };
    let contact = if colliders.is_empty() {
        None
    } else {
        Some(ContactTerm::new(colliders.to_vec(), s.contact)?)
    };
    let soft = !matches!(model.soft, SoftLayer::None);
    let mut sim = Simulable::new(model, settings.time_step, settings.newton.clone(), &settings.fixed_dofs)?;
    if !joints.is_empty() {
        sim.add_term(Box::new(JointTerm { joints }));
    }
    sim.add_term(Box::new(GravityTerm {
        gravity: Vec3::from(settings.gravity),
    }));
    if soft {
        sim.add_term(Box::new(ElasticTerm));
    }
    if let Some(t) = tracking {
        sim.add_term(Box::new(t));
    }
    if let Some(c) = contact {
        sim.add_term(Box::new(c));
    }
    Ok(sim)
}

/// Staged construction: template, model flags, volumetric data, then the
/// simulable.
pub struct SoftAvatar {
    pub template: BodyTemplate,
    pub settings: SimulationSettings,
    pub options: AvatarOptions,
    model: Option<AvatarModel>,
}

impl SoftAvatar {
    pub fn new(template: BodyTemplate) -> Self {
        Self {
            template,
            settings: SimulationSettings::articulated(),
            options: AvatarOptions::default(),
            model: None,
        }
    }

    pub fn enable_soft_tissue(&mut self) -> &mut Self {
        self.settings.soft_tissue = true;
        self.model = None;
        self
    }

    pub fn enable_reduced_model(&mut self) -> &mut Self {
        self.settings.reduced_model = true;
        self.model = None;
        self
    }

    pub fn enable_inertial_cubature(&mut self) -> &mut Self {
        self.settings.inertial_cubature = true;
        self.model = None;
        self
    }

    pub fn enable_elastic_cubature(&mut self) -> &mut Self {
        self.settings.elastic_cubature = true;
        self.model = None;
        self
    }

    /// Builds meshes, bases and cubature for the enabled flags.
    pub fn init_volumetric_data(&mut self) -> Result<&AvatarModel> {
        let model = AvatarModel::build(&self.template, &self.settings, &self.options)?;
        Ok(self.model.insert(model))
    }

    pub fn initialize(&mut self, mocap: Option<&MocapSequence>, colliders: &[Collider]) -> Result<Simulable<AvatarModel>> {
        let model = match self.model.take() {
            Some(m) => m,
            None => AvatarModel::build(&self.template, &self.settings, &self.options)?,
        };
        make_simulable(model, &self.settings, mocap, colliders)
    }
}
