//! Several avatars solved as one system, coupled by contact penalties.
//!
//! Articulated pairs collide through their capsule proxies. A soft avatar
//! collides through its surface vertices against the other avatar's
//! capsules.

use crate::avatar::{AvatarConfig, AvatarModel, SoftLayer};
use crate::contact::{capsule_penalty, max_capsule_penetration, Shape};
use crate::error::{check_len, Result};
use crate::kinematics::BONE_DOFS;
use crate::math::{segment_parameter, Vec3};
use crate::sim::{newton_minimize, Accumulator, DofModel, Level, NewtonSettings, Objective, Simulable, SolveReport};
use crate::sparse::TripletMatrix;

pub struct Scene {
    pub avatars: Vec<Simulable<AvatarModel>>,
    /// Penalty stiffness between avatars.
    pub contact_stiffness: f64,
    pub newton: NewtonSettings,
}

impl Scene {
    pub fn new(avatars: Vec<Simulable<AvatarModel>>, contact_stiffness: f64, newton: NewtonSettings) -> Self {
        Self {
            avatars,
            contact_stiffness,
            newton,
        }
    }

    pub fn dof_count(&self) -> usize {
        self.avatars.iter().map(|a| a.dof_count()).sum()
    }

    /// Start of each avatar's block in the stacked DoF vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut o = Vec::with_capacity(self.avatars.len());
        let mut n = 0;
        for a in &self.avatars {
            o.push(n);
            n += a.dof_count();
        }
        o
    }

    pub fn state(&self) -> Vec<f64> {
        self.avatars.iter().flat_map(|a| a.state().q.iter().copied()).collect()
    }

    /// One coupled backward-Euler step.
    pub fn step(&mut self) -> Result<SolveReport> {
        self.advance(false)
    }

    /// Moves time-dependent terms to the next frame, then takes a dynamic
    /// step or, in static mode, a static solve.
    pub fn advance(&mut self, static_mode: bool) -> Result<SolveReport> {
        for a in &mut self.avatars {
            a.pre_update()?;
        }
        self.solve(static_mode)
    }

    /// Coupled minimization of the potentials alone; velocities are zeroed.
    pub fn static_solve(&mut self) -> Result<SolveReport> {
        self.solve(true)
    }

    fn solve(&mut self, static_mode: bool) -> Result<SolveReport> {
        let mut q = self.state();
        let report = {
            let obj = SceneObjective::new(self, static_mode);
            newton_minimize(&obj, &mut q, &self.newton)?
        };
        let offsets = self.offsets();
        for (a, o) in self.avatars.iter_mut().zip(offsets) {
            let n = a.dof_count();
            a.accept(&q[o..o + n], static_mode)?;
            a.post_update()?;
        }
        Ok(report)
    }

    /// Stacked objective at `q` (inertia included unless `static_mode`).
    pub fn objective(&self, q: &[f64], static_mode: bool, level: Level) -> Result<(f64, Vec<f64>, TripletMatrix)> {
        let obj = SceneObjective::new(self, static_mode);
        match level {
            Level::Value => Ok((obj.value(q)?, Vec::new(), TripletMatrix::square(0))),
            _ => obj.evaluate(q),
        }
    }

    /// Coupling penalty between avatars at `q`; returns the deepest
    /// penetration.
    pub fn coupling(&self, q: &[f64], out: &mut Accumulator) -> Result<f64> {
        check_len("scene state", self.dof_count(), q.len())?;
        let offsets = self.offsets();
        let configs = self.configs(q, &offsets)?;
        Ok(self.coupling_at(&configs, &offsets, out))
    }

    fn configs(&self, q: &[f64], offsets: &[usize]) -> Result<Vec<AvatarConfig>> {
        self.avatars
            .iter()
            .zip(offsets)
            .map(|(a, &o)| a.model().configure(&a.state().anchor, &q[o..o + a.dof_count()]))
            .collect()
    }

    fn coupling_at(&self, configs: &[AvatarConfig], offsets: &[usize], out: &mut Accumulator) -> f64 {
        let k = self.contact_stiffness;
        let mut depth: f64 = 0.0;
        for i in 0..self.avatars.len() {
            for j in i + 1..self.avatars.len() {
                let (mi, mj) = (self.avatars[i].model(), self.avatars[j].model());
                let soft_i = !matches!(mi.soft, SoftLayer::None);
                let soft_j = !matches!(mj.soft, SoftLayer::None);
                if !soft_i && !soft_j {
                    let d = capsule_penalty(&mi.proxies, &configs[i].frames, offsets[i], &mj.proxies, &configs[j].frames, offsets[j], k, out);
                    depth = depth.max(d);
                    continue;
                }
                if soft_i {
                    depth = depth.max(vertex_capsule_penalty(mi, &configs[i], offsets[i], mj, &configs[j], offsets[j], k, out));
                }
                if soft_j {
                    depth = depth.max(vertex_capsule_penalty(mj, &configs[j], offsets[j], mi, &configs[i], offsets[i], k, out));
                }
            }
        }
        depth
    }

    /// Deepest penetration between any two avatars at the current state.
    pub fn max_penetration(&self) -> f64 {
        let mut depth: f64 = 0.0;
        for i in 0..self.avatars.len() {
            for j in i + 1..self.avatars.len() {
                let (a, b) = (&self.avatars[i], &self.avatars[j]);
                depth = depth.max(max_capsule_penetration(&a.model().proxies, &a.config().frames, &b.model().proxies, &b.config().frames));
            }
        }
        depth
    }
}

/// `1/2 k A d^2` for surface vertices of `soft` inside capsules of
/// `other`. The closest point on the capsule axis is held fixed in its
/// bone frame.
#[allow(clippy::too_many_arguments)]
fn vertex_capsule_penalty(
    soft: &AvatarModel,
    soft_cfg: &AvatarConfig,
    soft_offset: usize,
    other: &AvatarModel,
    other_cfg: &AvatarConfig,
    other_offset: usize,
    stiffness: f64,
    out: &mut Accumulator,
) -> f64 {
    let capsules: Vec<(Shape, usize, Vec3, Vec3, Vec3, Vec3)> = other
        .proxies
        .iter()
        .map(|c| {
            let (a, b) = c.world(&other_cfg.frames[c.bone]);
            let (la, lb) = c.local();
            (
                Shape::Capsule {
                    a: [a.x, a.y, a.z],
                    b: [b.x, b.y, b.z],
                    radius: c.radius,
                },
                c.bone,
                a,
                b,
                la,
                lb,
            )
        })
        .collect();
    let mut depth: f64 = 0.0;
    let mut cols = Vec::new();
    let mut grad_cols = Vec::new();
    for (s, &v) in soft.surface.iter().enumerate() {
        let x = soft_cfg.world[v];
        for (shape, bone, a, b, la, lb) in &capsules {
            let Some((lo, hi)) = shape.bounds() else { continue };
            if (0..3).any(|i| x[i] < lo[i] || x[i] > hi[i]) {
                continue;
            }
            let (sd, n) = shape.signed_distance(&x);
            if sd >= 0.0 {
                continue;
            }
            let d = -sd;
            depth = depth.max(d);
            let ka = stiffness * soft.surface_areas[s];
            out.value += 0.5 * ka * d * d;
            if !out.wants_gradient() {
                continue;
            }
            let t = segment_parameter(&x, a, b);
            let local = la + (lb - la) * t;
            let jc = other_cfg.frames[*bone].point_jacobian(&local).transpose() * n;
            soft.vertex_columns(soft_cfg, v, &mut cols);
            grad_cols.clear();
            grad_cols.extend(cols.iter().map(|(i, c)| (soft_offset + i, -c.dot(&n))));
            grad_cols.extend((0..BONE_DOFS).map(|k| (other_offset + BONE_DOFS * bone + k, jc[k])));
            out.add_gauss_newton(&grad_cols, ka * d, ka);
        }
    }
    depth
}

struct SceneObjective<'a> {
    scene: &'a Scene,
    static_mode: bool,
    offsets: Vec<usize>,
    fixed: Vec<bool>,
}

impl<'a> SceneObjective<'a> {
    fn new(scene: &'a Scene, static_mode: bool) -> Self {
        Self {
            scene,
            static_mode,
            offsets: scene.offsets(),
            fixed: scene.avatars.iter().flat_map(|a| a.fixed().iter().copied()).collect(),
        }
    }

    fn dense_dofs(&self) -> usize {
        // Soft blocks are assembled sparse at the scene level.
        0
    }
}

impl Objective for SceneObjective<'_> {
    fn dim(&self) -> usize {
        self.fixed.len()
    }

    fn value(&self, q: &[f64]) -> Result<f64> {
        let mut f = 0.0;
        for (a, &o) in self.scene.avatars.iter().zip(&self.offsets) {
            f += a.objective_value(&q[o..o + a.dof_count()], self.static_mode)?;
        }
        let configs = self.scene.configs(q, &self.offsets)?;
        let mut acc = Accumulator::new(self.dim(), self.dense_dofs(), Level::Value);
        self.scene.coupling_at(&configs, &self.offsets, &mut acc);
        Ok(f + acc.value)
    }

    fn evaluate(&self, q: &[f64]) -> Result<(f64, Vec<f64>, TripletMatrix)> {
        let n = self.dim();
        let configs = self.scene.configs(q, &self.offsets)?;
        let mut acc = Accumulator::new(n, self.dense_dofs(), Level::Hessian);
        self.scene.coupling_at(&configs, &self.offsets, &mut acc);
        let mut f = acc.value;
        let mut g = acc.gradient;
        let mut h = acc.hessian.finish();
        for (a, &o) in self.scene.avatars.iter().zip(&self.offsets) {
            let (fa, ga, ha) = a.objective_derivatives(&q[o..o + a.dof_count()], self.static_mode)?;
            f += fa;
            for (i, x) in ga.iter().enumerate() {
                g[o + i] += x;
            }
            h.append_shifted(&ha, o);
        }
        Ok((f, g, h))
    }

    fn regularization_scale(&self) -> Vec<f64> {
        self.scene.avatars.iter().flat_map(|a| a.regularization_scale()).collect()
    }

    fn fixed(&self) -> &[bool] {
        &self.fixed
    }
}
